/* Copyright 2026 The mvdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

namespace mvdet::testing {

struct Row {
  double nds, map, ate, ase, aoe, ave, aae;
};

// Published detector results (NDS, mAP, five TP errors) from the validation,
// test and overlap-region tables.
inline const Row kPublished[] = {
    {0.328, 0.306, 0.716, 0.264, 0.609, 1.426, 0.658}, {0.373, 0.299, 0.785, 0.268, 0.557, 1.396, 0.154},
    {0.393, 0.321, 0.746, 0.265, 0.503, 1.351, 0.160}, {0.402, 0.326, 0.743, 0.259, 0.441, 1.341, 0.163},
    {0.415, 0.343, 0.725, 0.263, 0.422, 1.292, 0.153}, {0.374, 0.303, 0.860, 0.278, 0.437, 0.967, 0.235},
    {0.425, 0.346, 0.773, 0.268, 0.383, 0.842, 0.216}, {0.434, 0.349, 0.716, 0.268, 0.379, 0.842, 0.200},
    {0.429, 0.366, 0.642, 0.252, 0.523, 1.591, 0.119}, {0.437, 0.363, 0.667, 0.259, 0.402, 1.589, 0.120},
    {0.448, 0.386, 0.626, 0.245, 0.451, 1.509, 0.127}, {0.477, 0.418, 0.572, 0.249, 0.368, 1.014, 0.124},
    {0.479, 0.412, 0.641, 0.255, 0.394, 0.845, 0.133}, {0.317, 0.213, 0.841, 0.276, 0.604, 1.122, 0.173},
    {0.329, 0.229, 0.816, 0.272, 0.571, 1.084, 0.195}, {0.356, 0.231, 0.825, 0.280, 0.400, 0.863, 0.223},
    {0.384, 0.268, 0.807, 0.273, 0.453, 0.788, 0.184},
};

}  // namespace mvdet::testing
