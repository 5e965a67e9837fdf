#include "rrpsr/autodiff.hpp"

// The engine is header-only (templated on the scalar type); this translation
// unit pins down explicit instantiations for the two scalar types the rest
// of the project uses, so most TUs only pay for the declarations.
namespace rrpsr::ad {

template class Tensor<float>;
template class Tensor<double>;

template void backward<float>(Tensor<float>&);
template void backward<double>(Tensor<double>&);

}  // namespace rrpsr::ad
