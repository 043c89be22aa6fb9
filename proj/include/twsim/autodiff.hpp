#pragma once

#include <unsupported/Eigen/AutoDiff>

#include <cmath>

namespace Eigen {

// AutoDiffScalar ships without atan; the Magic Formula needs it.
template <typename DerType>
inline AutoDiffScalar<typename internal::remove_all<DerType>::type::PlainObject> atan(
    const AutoDiffScalar<DerType>& x) {
    using Plain = typename internal::remove_all<DerType>::type::PlainObject;
    const double value = x.value();
    return AutoDiffScalar<Plain>(std::atan(value), x.derivatives() / (1.0 + value * value));
}

}  // namespace Eigen
