// Copyright 2026 The netquant Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "netquant/architectures.hpp"
#include "netquant/bytes.hpp"
#include "netquant/checkpoint.hpp"
#include "netquant/clustering.hpp"
#include "netquant/codebook.hpp"
#include "netquant/codec.hpp"
#include "netquant/dataset.hpp"
#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/partition.hpp"
#include "netquant/quantizer.hpp"
#include "netquant/rng.hpp"
#include "netquant/synthetic.hpp"
#include "netquant/tensor.hpp"
#include "netquant/train.hpp"
