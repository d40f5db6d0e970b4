#include "lgmoe/edit_distance.hpp"

#include <algorithm>

namespace lgmoe {

EditStats edit_distance(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const int n = static_cast<int>(hyp.size());
  const int m = static_cast<int>(ref.size());
  struct Cell {
    int cost, s, i, d;
  };
  std::vector<Cell> prev(static_cast<size_t>(m) + 1), cur(static_cast<size_t>(m) + 1);
  for (int j = 0; j <= m; ++j) prev[static_cast<size_t>(j)] = {j, 0, 0, j};  // delete ref[0..j)
  for (int i = 1; i <= n; ++i) {
    cur[0] = {i, 0, i, 0};  // insert hyp[0..i)
    for (int j = 1; j <= m; ++j) {
      bool match = hyp[static_cast<size_t>(i - 1)] == ref[static_cast<size_t>(j - 1)];
      Cell sub = prev[static_cast<size_t>(j - 1)];
      sub.cost += match ? 0 : 1;
      if (!match) sub.s += 1;
      Cell del = prev[static_cast<size_t>(j)];
      del.cost += 1;
      del.d += 1;
      Cell ins = cur[static_cast<size_t>(j - 1)];
      ins.cost += 1;
      ins.i += 1;
      Cell best = sub;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      cur[static_cast<size_t>(j)] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& final_cell = prev[static_cast<size_t>(m)];
  EditStats out;
  out.substitutions = final_cell.s;
  out.insertions = final_cell.i;
  out.deletions = final_cell.d;
  out.empty_ref = m == 0 && n > 0;
  out.rate = static_cast<double>(final_cell.cost) / std::max(1, m);
  return out;
}

}  // namespace lgmoe
