// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shortv/bench.hpp"
#include "shortv/core_math.hpp"
#include "shortv/error.hpp"
#include "shortv/flops.hpp"
#include "shortv/io.hpp"
#include "shortv/metrics.hpp"
#include "shortv/model.hpp"
#include "shortv/model_types.hpp"
#include "shortv/pruning.hpp"
#include "shortv/toymodel.hpp"
