/*
 * Copyright 2026 The MRD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MRD_MRD_HPP
#define MRD_MRD_HPP

#include "mrd/errors.hpp"
#include "mrd/linalg.hpp"
#include "mrd/kernels.hpp"
#include "mrd/psi.hpp"
#include "mrd/latent.hpp"
#include "mrd/bound.hpp"
#include "mrd/optim.hpp"
#include "mrd/model.hpp"
#include "mrd/infer.hpp"
#include "mrd/io.hpp"

#endif
