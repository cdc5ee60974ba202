#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cnnga::data {

/// H x W x 3 pixels in [0,1], interleaved (HWC).
struct ImageRecord {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;
    int label = 0;
    std::string source;

    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct SplitDataset {
    std::vector<ImageRecord> train;
    std::vector<ImageRecord> val;
    std::uint64_t split_seed = 0;
};

/// Decoded image before resizing: HWC with `channels` in {1, 3}, values already in [0,1].
struct RawImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> values;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(std::span<const unsigned char> bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok += static_cast<char>(bytes[pos++]);
    return tok;
}

inline std::size_t pnm_number(std::span<const unsigned char> bytes, std::size_t& pos, const char* what) {
    const std::string tok = pnm_token(bytes, pos);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw DataError(std::string("pnm: bad ") + what);
    }
    return std::stoul(tok);
}

} // namespace detail

/// Binary PPM (P6) or PGM (P5), 8 or 16 bit.
inline RawImage decode_pnm(std::span<const unsigned char> bytes) {
    std::size_t pos = 0;
    const std::string magic = detail::pnm_token(bytes, pos);
    if (magic != "P6" && magic != "P5") throw DataError("pnm: unsupported magic '" + magic + "'");
    RawImage img;
    img.channels = magic == "P6" ? 3 : 1;
    img.width = detail::pnm_number(bytes, pos, "width");
    img.height = detail::pnm_number(bytes, pos, "height");
    const std::size_t maxval = detail::pnm_number(bytes, pos, "maxval");
    if (img.width == 0 || img.height == 0) throw DataError("pnm: empty image");
    if (maxval == 0 || maxval > 65535) throw DataError("pnm: maxval out of range");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DataError("pnm: header not terminated");
    ++pos;
    const std::size_t bps = maxval < 256 ? 1 : 2;
    const std::size_t count = img.width * img.height * img.channels;
    if (bytes.size() - pos < count * bps) throw DataError("pnm: truncated pixel data");
    img.values.resize(count);
    const float scale = 1.0f / static_cast<float>(maxval);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t v = bps == 1 ? bytes[pos + i] : (std::size_t(bytes[pos + 2 * i]) << 8 | bytes[pos + 2 * i + 1]);
        if (v > maxval) throw DataError("pnm: sample exceeds maxval");
        img.values[i] = static_cast<float>(v) * scale;
    }
    return img;
}

/// Raw tensor: text line `H W C`, newline, then H*W*C little-endian float32 values in [0,1] (HWC).
inline RawImage decode_raw_tensor(std::span<const unsigned char> bytes) {
    std::size_t eol = 0;
    while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
    if (eol == bytes.size()) throw DataError("raw tensor: missing header line");
    std::istringstream header(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(eol)));
    RawImage img;
    if (!(header >> img.height >> img.width >> img.channels)) throw DataError("raw tensor: malformed header");
    if (img.height == 0 || img.width == 0 || (img.channels != 1 && img.channels != 3)) {
        throw DataError("raw tensor: unsupported shape");
    }
    const std::size_t count = img.height * img.width * img.channels;
    const std::size_t pos = eol + 1;
    if (bytes.size() - pos != count * 4) throw DataError("raw tensor: payload size does not match header");
    img.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* b = bytes.data() + pos + 4 * i;
        const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                                   std::uint32_t(b[3]) << 24;
        const float v = std::bit_cast<float>(bits);
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("raw tensor: value outside [0,1]");
        img.values[i] = v;
    }
    return img;
}

/// Bilinear resize with half-pixel centers and edge clamping; grey input is promoted to 3 channels.
inline std::vector<float> resize_bilinear(const RawImage& src, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw InvalidArgument("resize target must be non-empty");
    std::vector<float> out(out_h * out_w * 3);
    const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
    auto sample = [&](std::size_t y, std::size_t x, std::size_t c) {
        return src.values[(y * src.width + x) * src.channels + (src.channels == 1 ? 0 : c)];
    };
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const float ty = static_cast<float>(fy - static_cast<double>(y0));
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double fx =
                std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const float tx = static_cast<float>(fx - static_cast<double>(x0));
            for (std::size_t c = 0; c < 3; ++c) {
                // a + t*(b - a) keeps constant regions exact.
                const float top = sample(y0, x0, c) + tx * (sample(y0, x1, c) - sample(y0, x0, c));
                const float bottom = sample(y1, x0, c) + tx * (sample(y1, x1, c) - sample(y1, x0, c));
                out[(oy * out_w + ox) * 3 + c] = std::clamp(top + ty * (bottom - top), 0.0f, 1.0f);
            }
        }
    }
    return out;
}

inline RawImage decode_image_file(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    const std::string ext = path.extension().string();
    if (ext == ".tensor") return decode_raw_tensor(bytes);
    return decode_pnm(bytes);
}

inline bool is_supported_image(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm" || ext == ".tensor";
}

/// Loads `<root>/0/*` and `<root>/1/*`, resized to target size, ordered by class then filename.
/// Decoding failures are collected and reported together.
inline std::vector<ImageRecord> load_directory(const std::filesystem::path& root, std::size_t target_h,
                                               std::size_t target_w) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
    std::vector<ImageRecord> out;
    std::vector<std::string> failures;
    for (int label = 0; label < 2; ++label) {
        const fs::path dir = root / std::to_string(label);
        if (!fs::is_directory(dir)) throw DataError("missing class directory " + dir.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
        if (files.empty()) throw DataError("class directory " + dir.string() + " holds no images");
        for (const auto& f : files) {
            try {
                const RawImage raw = decode_image_file(f);
                ImageRecord rec;
                rec.height = target_h;
                rec.width = target_w;
                rec.pixels = resize_bilinear(raw, target_h, target_w);
                rec.label = label;
                rec.source = (fs::path(std::to_string(label)) / f.filename()).string();
                out.push_back(std::move(rec));
            } catch (const Error& e) {
                failures.push_back(f.string() + ": " + e.what());
            }
        }
    }
    if (!failures.empty()) {
        std::string msg = std::to_string(failures.size()) + " unreadable image file(s):";
        for (const auto& f : failures) msg += "\n  " + f;
        throw DataError(msg);
    }
    return out;
}

/// Number of training records: ratio * n rounded to nearest, halves away from zero.
inline std::size_t train_count(std::size_t n, double ratio) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

/// Seeded shuffle, then the first round(ratio * n) records train and the rest validate.
inline SplitDataset split(std::vector<ImageRecord> records, double ratio, std::uint64_t seed) {
    if (records.size() < 2) throw DataError("split needs at least two records");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0,1)");
    Rng rng(seed);
    shuffle(records.begin(), records.end(), rng);
    const std::size_t n_train = train_count(records.size(), ratio);
    SplitDataset out;
    out.split_seed = seed;
    out.train.assign(std::make_move_iterator(records.begin()),
                     std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)));
    out.val.assign(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)),
                   std::make_move_iterator(records.end()));
    return out;
}

/// Two-class synthetic set. Class 1 carries a bright soft-edged ellipse over the background noise
/// of class 0. Even indices are class 0, so class 0 holds ceil(n/2) records.
inline std::vector<ImageRecord> synth_generate(std::size_t n, std::size_t height, std::size_t width,
                                               std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("synthetic set needs at least two images");
    if (height < 8 || width < 8) throw InvalidArgument("synthetic images must be at least 8x8");
    std::vector<ImageRecord> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        ImageRecord& rec = out[i];
        rec.height = height;
        rec.width = width;
        rec.label = static_cast<int>(i % 2);
        char name[32];
        std::snprintf(name, sizeof name, "synthetic_%05zu", i);
        rec.source = name;
        rec.pixels.resize(height * width * 3);
        const double base = uniform_real(rng, 0.15, 0.3);
        for (std::size_t p = 0; p < height * width; ++p) {
            const double grey = base + uniform_real(rng, -0.1, 0.1);
            for (std::size_t c = 0; c < 3; ++c) {
                rec.pixels[p * 3 + c] = static_cast<float>(grey + uniform_real(rng, -0.02, 0.02));
            }
        }
        if (rec.label == 1) {
            const double h = static_cast<double>(height), w = static_cast<double>(width);
            const double cy = uniform_real(rng, 0.25 * h, 0.75 * h);
            const double cx = uniform_real(rng, 0.25 * w, 0.75 * w);
            const double ry = uniform_real(rng, 0.12 * h, 0.25 * h);
            const double rx = uniform_real(rng, 0.12 * w, 0.25 * w);
            const double amplitude = uniform_real(rng, 0.45, 0.6);
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
                    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                    const double r2 = dy * dy + dx * dx;
                    const double weight = r2 < 1.0 ? 1.0 : std::exp(-4.0 * (r2 - 1.0));
                    for (std::size_t c = 0; c < 3; ++c) {
                        rec.pixels[(y * width + x) * 3 + c] += static_cast<float>(amplitude * weight);
                    }
                }
            }
        }
        for (auto& v : rec.pixels) v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

enum class ImageFormat { ppm, tensor };

/// Writes records in the loader layout `<dir>/<label>/<index>.<ext>`.
inline void write_dataset(std::span<const ImageRecord> records, const std::filesystem::path& dir,
                          ImageFormat format = ImageFormat::ppm) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "0");
    fs::create_directories(dir / "1");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ImageRecord& rec = records[i];
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.%s", i, format == ImageFormat::ppm ? "ppm" : "tensor");
        const fs::path path = dir / std::to_string(rec.label) / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot write " + path.string());
        if (format == ImageFormat::ppm) {
            os << "P6\n" << rec.width << ' ' << rec.height << "\n255\n";
            for (float v : rec.pixels) {
                os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
            }
        } else {
            os << rec.height << ' ' << rec.width << " 3\n";
            for (float v : rec.pixels) {
                const auto bits = std::bit_cast<std::uint32_t>(v);
                const char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8), static_cast<char>(bits >> 16),
                                   static_cast<char>(bits >> 24)};
                os.write(b, 4);
            }
        }
        if (!os) throw DataError("failed writing " + path.string());
    }
}

template <class T>
struct Batch {
    Tensor<T> x;  // (N, 3, H, W)
    std::vector<int> y;
};

/// One epoch's mini-batch schedule over a fixed record list. Batches are materialized on demand.
class BatchPlan {
public:
    BatchPlan(std::span<const ImageRecord> records, std::size_t batch_size, std::uint64_t epoch_seed)
        : records_(records), batch_size_(batch_size), order_(records.size()) {
        if (batch_size == 0) throw InvalidArgument("batch size must be at least 1");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(epoch_seed);
        shuffle(order_.begin(), order_.end(), rng);
    }

    std::size_t size() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

    /// Record positions in batch `i`.
    std::span<const std::size_t> indices(std::size_t i) const {
        const std::size_t begin = i * batch_size_;
        const std::size_t end = std::min(order_.size(), begin + batch_size_);
        return std::span<const std::size_t>(order_).subspan(begin, end - begin);
    }

    template <class T = float>
    Batch<T> batch(std::size_t i) const {
        return make_batch<T>(records_, indices(i));
    }

    template <class T = float>
    static Batch<T> make_batch(std::span<const ImageRecord> records, std::span<const std::size_t> idx) {
        if (idx.empty()) throw InvalidArgument("empty batch");
        const std::size_t h = records[idx[0]].height, w = records[idx[0]].width;
        Batch<T> b{Tensor<T>({idx.size(), 3, h, w}), {}};
        b.y.reserve(idx.size());
        for (std::size_t n = 0; n < idx.size(); ++n) {
            const ImageRecord& rec = records[idx[n]];
            if (rec.height != h || rec.width != w) throw ShapeError("batch records differ in size");
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) b.x(n, c, y, x) = static_cast<T>(rec.at(y, x, c));
                }
            }
            b.y.push_back(rec.label);
        }
        return b;
    }

private:
    std::span<const ImageRecord> records_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
};

inline BatchPlan batches(std::span<const ImageRecord> records, std::size_t batch_size, std::uint64_t epoch_seed) {
    return BatchPlan(records, batch_size, epoch_seed);
}

} // namespace cnnga::data
