// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rmm/accounting.hpp"
#include "rmm/baseline.hpp"
#include "rmm/bench.hpp"
#include "rmm/bundle_io.hpp"
#include "rmm/container.hpp"
#include "rmm/core.hpp"
#include "rmm/io.hpp"
#include "rmm/linalg.hpp"
#include "rmm/lowrank.hpp"
#include "rmm/parallel.hpp"
