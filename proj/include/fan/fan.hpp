#pragma once

// Umbrella header for the fan library: two-stage disentangled identity
// representation learning with low-resolution feature adaptation, plus the
// synthetic data, training, and evaluation harness around it.

#include "fan/checkpoint.hpp"
#include "fan/common.hpp"
#include "fan/config.hpp"
#include "fan/datagen.hpp"
#include "fan/eval.hpp"
#include "fan/gradcheck.hpp"
#include "fan/image.hpp"
#include "fan/nets.hpp"
#include "fan/objectives.hpp"
#include "fan/optimizer.hpp"
#include "fan/params.hpp"
#include "fan/pipeline.hpp"
#include "fan/resample.hpp"
#include "fan/rng.hpp"
#include "fan/tape.hpp"
#include "fan/tensor.hpp"
#include "fan/trainer.hpp"
