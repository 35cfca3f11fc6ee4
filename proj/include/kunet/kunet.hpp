// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kunet/checkpoint.hpp"
#include "kunet/cli.hpp"
#include "kunet/config.hpp"
#include "kunet/data.hpp"
#include "kunet/errors.hpp"
#include "kunet/grad_check.hpp"
#include "kunet/kernels.hpp"
#include "kunet/normalize.hpp"
#include "kunet/partition.hpp"
#include "kunet/random.hpp"
#include "kunet/synthetic.hpp"
#include "kunet/tensor.hpp"
#include "kunet/text.hpp"
#include "kunet/train.hpp"
#include "kunet/unet.hpp"
