#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace punctasr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kBlankId = 0;

}  // namespace punctasr
