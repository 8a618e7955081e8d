#pragma once

#include "l2d/analysis.hpp"
#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/experiment.hpp"
#include "l2d/losses.hpp"
#include "l2d/random.hpp"
#include "l2d/serialize.hpp"
#include "l2d/training.hpp"
