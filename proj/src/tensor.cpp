#include "lungsc/tensor.hpp"

#include <sstream>

namespace lungsc {

std::string Tensor::shape_str() const {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
  ss << "]";
  return ss.str();
}

}  // namespace lungsc
