// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef FP8Q_FP8Q_HPP_
#define FP8Q_FP8Q_HPP_

#include "fp8q/calibration.hpp"
#include "fp8q/csv.hpp"
#include "fp8q/data.hpp"
#include "fp8q/experiments.hpp"
#include "fp8q/format.hpp"
#include "fp8q/graph.hpp"
#include "fp8q/model_io.hpp"
#include "fp8q/models.hpp"
#include "fp8q/ops.hpp"
#include "fp8q/quantizer.hpp"
#include "fp8q/random.hpp"
#include "fp8q/tensor.hpp"
#include "fp8q/tuner.hpp"
#include "fp8q/workflow.hpp"

#endif  // FP8Q_FP8Q_HPP_
