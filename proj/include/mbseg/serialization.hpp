#pragma once

#include <json.hpp>

#include "mbseg/losses.hpp"
#include "mbseg/networks.hpp"

namespace mbseg {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneSpec, name, input_channels, base_width, depth,
                                                dilation_last_stage)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HybridLossParams, lambda_weight, k_hard, margin, epsilon)

}  // namespace mbseg
