#include "lgmoe/mask.hpp"

#include "lgmoe/common.hpp"

namespace lgmoe {

BoolMatrix chunk_mask(int t_total, int chunk_size) {
  LGMOE_CHECK(chunk_size >= 1, "chunk_mask: chunk_size must be >= 1, got " << chunk_size);
  BoolMatrix m(t_total, t_total, 0);
  for (int i = 0; i < t_total; ++i) {
    int limit = (i / chunk_size + 1) * chunk_size;
    if (limit > t_total) limit = t_total;
    for (int j = 0; j < limit; ++j) m.set(i, j, true);
  }
  return m;
}

BoolMatrix full_mask(int t_total) { return BoolMatrix(t_total, t_total, 1); }

}  // namespace lgmoe
