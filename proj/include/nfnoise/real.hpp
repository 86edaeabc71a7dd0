#pragma once

// Scalar precision of the library. The default build uses 32-bit floats; a
// second build with NFNOISE_USE_DOUBLE exists for gradient verification.
// The inline namespace keeps both builds linkable into one binary.

#ifdef NFNOISE_USE_DOUBLE
#define NFNOISE_ABI f64
#else
#define NFNOISE_ABI f32
#endif

namespace nfnoise::inline NFNOISE_ABI {

#ifdef NFNOISE_USE_DOUBLE
using real = double;
#else
using real = float;
#endif

}  // namespace nfnoise::inline NFNOISE_ABI
