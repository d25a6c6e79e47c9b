#pragma once

// Everything: tensors and autodiff, LR-QA layers, the design encoder, physics
// operators, losses and metrics, synthetic data, training and checkpoints,
// benchmarks and the property suites.

#include "lrq/bench.hpp"
#include "lrq/checkpoint.hpp"
#include "lrq/run_config.hpp"
#include "lrq/verify.hpp"
