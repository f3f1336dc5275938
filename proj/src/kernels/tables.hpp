// Copyright 2026-present the emcar project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "emcar/kernels.hpp"

namespace emcar::kernels::detail {

template <class T>
const KernelTable<T>& scalar_kernels();

#if defined(EMCAR_HAVE_AVX2)
template <class T>
const KernelTable<T>& avx2_kernels();
#endif

}  // namespace emcar::kernels::detail
