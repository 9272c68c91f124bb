// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "radarpos/autograd.hpp"
#include "radarpos/checkpoint.hpp"
#include "radarpos/config.hpp"
#include "radarpos/dataset_io.hpp"
#include "radarpos/errors.hpp"
#include "radarpos/experiment.hpp"
#include "radarpos/finetune.hpp"
#include "radarpos/gradcheck.hpp"
#include "radarpos/gradcheck_suite.hpp"
#include "radarpos/io.hpp"
#include "radarpos/losses.hpp"
#include "radarpos/metrics.hpp"
#include "radarpos/model.hpp"
#include "radarpos/ops.hpp"
#include "radarpos/optim.hpp"
#include "radarpos/parallel.hpp"
#include "radarpos/pdw.hpp"
#include "radarpos/pretrain.hpp"
#include "radarpos/rng.hpp"
#include "radarpos/tensor.hpp"
