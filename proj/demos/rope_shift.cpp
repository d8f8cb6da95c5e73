// Prints rotary attention logits for one sequence placed at two different
// absolute positions. The two tables agree: only relative offsets matter.

#include <cstdio>

#include "ropeformer/attention.hpp"

namespace rf = ropeformer;

int main() {
  rf::Rng rng(7);
  constexpr std::size_t d = 16, heads = 2, t = 4;
  const rf::AttentionParams params = rf::make_attention_params(d, d, heads, rng, 0.5);
  const rf::PEMode pe = rf::make_pe_mode(rf::PEKind::rotary, d, d, d / heads, rng, {256});
  const rf::Tensor x = rf::randn({t, d}, rng);
  for (std::size_t offset : {0, 100}) {
    const rf::Tensor logits = rf::attention_logits(x, params, pe, offset);
    std::printf("head 0 logits, positions %zu..%zu\n", offset, offset + t - 1);
    for (std::size_t m = 0; m < t; ++m) {
      for (std::size_t n = 0; n < t; ++n) std::printf(" %+.12f", logits(0, m, n));
      std::printf("\n");
    }
  }
  return 0;
}
