#pragma once

#include "lsro/config.hpp"
#include "lsro/dataset.hpp"
#include "lsro/experiment.hpp"
#include "lsro/gan.hpp"
#include "lsro/losses.hpp"
#include "lsro/network.hpp"
#include "lsro/retrieval.hpp"
#include "lsro/rng.hpp"
#include "lsro/tensor.hpp"
#include "lsro/train.hpp"
