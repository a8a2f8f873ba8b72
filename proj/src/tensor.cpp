#include "ltm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ltm {

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* where) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + where);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

}  // namespace ltm
