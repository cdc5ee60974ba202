#pragma once

#include "adam.hpp"
#include "dataio.hpp"
#include "errors.hpp"
#include "evolution.hpp"
#include "fitness.hpp"
#include "genome.hpp"
#include "gradcheck.hpp"
#include "layers.hpp"
#include "network.hpp"
#include "persistence.hpp"
#include "random.hpp"
#include "tensor.hpp"
