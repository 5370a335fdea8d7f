#pragma once

#include "sila/autodiff.hpp"
#include "sila/data_io.hpp"
#include "sila/dynamic_eval.hpp"
#include "sila/error.hpp"
#include "sila/experiments.hpp"
#include "sila/losses.hpp"
#include "sila/models.hpp"
#include "sila/rng.hpp"
#include "sila/training.hpp"
