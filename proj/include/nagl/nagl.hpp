#pragma once

#include "nagl/autodiff.hpp"
#include "nagl/commands.hpp"
#include "nagl/config.hpp"
#include "nagl/conformance.hpp"
#include "nagl/episode_sampler.hpp"
#include "nagl/error.hpp"
#include "nagl/evaluation.hpp"
#include "nagl/feature_store.hpp"
#include "nagl/inference.hpp"
#include "nagl/losses.hpp"
#include "nagl/metrics.hpp"
#include "nagl/nn_scoring.hpp"
#include "nagl/rm_afl.hpp"
#include "nagl/rng.hpp"
#include "nagl/synth.hpp"
#include "nagl/training.hpp"
