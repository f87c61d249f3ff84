// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Loop-nest evaluation of asymmetric co-attention, independent of the
// matrix code paths in the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "refseg/coattention.hpp"

namespace refseg::testing {

using Grid = std::vector<std::vector<double>>;  // [channel][position]

inline Grid to_grid(const Tensor& x) {
  const auto c = x.dim(0), area = x.numel() / c;
  Grid g(c, std::vector<double>(area));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t p = 0; p < area; ++p) g[i][p] = x[i * area + p];
  }
  return g;
}

inline Grid project(const Tensor& w, const Grid& x) {
  Grid out(w.dim(0), std::vector<double>(x[0].size(), 0.0));
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    for (std::size_t c = 0; c < w.dim(1); ++c) {
      for (std::size_t p = 0; p < x[0].size(); ++p) out[o][p] += w.at(o, c) * x[c][p];
    }
  }
  return out;
}

// Pyramid pooling by explicit bin enumeration: [channel][anchor].
inline Grid pool(const Grid& x, std::size_t h, std::size_t w, const std::vector<std::size_t>& bins) {
  Grid out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    for (auto b0 : bins) {
      const auto b = std::min({b0, h, w});
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t bj = 0; bj < b; ++bj) {
          const auto y0 = bi * h / b, y1 = ((bi + 1) * h + b - 1) / b;
          const auto x0 = bj * w / b, x1 = ((bj + 1) * w + b - 1) / b;
          double s = 0.0;
          for (auto y = y0; y < y1; ++y) {
            for (auto xx = x0; xx < x1; ++xx) s += x[c][y * w + xx];
          }
          out[c].push_back(s / static_cast<double>((y1 - y0) * (x1 - x0)));
        }
      }
    }
  }
  return out;
}

struct AcmReference {
  Grid m_updated, l_updated;  // [channel][position]
  std::vector<std::vector<double>> a3;
};

inline AcmReference acm_loops(const Tensor& m, const Tensor& l, const AcmParams& p, const std::vector<std::size_t>& bins) {
  const auto h = m.dim(1), w = m.dim(2), hw = h * w;
  const auto gm = to_grid(m), gl = to_grid(l);
  const auto am = pool(project(p.w_m1, gm), h, w, bins), al = pool(project(p.w_l1, gl), h, w, bins);
  const auto km = project(p.w_m2, gm), kl = project(p.w_l2, gl);
  const auto vm = pool(project(p.w_m3, gm), h, w, bins), vl = pool(project(p.w_l3, gl), h, w, bins);
  const auto c1 = am.size(), n = am[0].size();
  AcmReference ref;
  ref.a3.assign(hw, std::vector<double>(n));
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = -1e300;
    for (std::size_t a = 0; a < n; ++a) {
      double s = 0.0;
      for (std::size_t c = 0; c < c1; ++c) s += am[c][a] * km[c][p] + al[c][a] * kl[c][p];
      ref.a3[p][a] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (auto& v : ref.a3[p]) z += (v = std::exp(v - mx));
    for (auto& v : ref.a3[p]) v /= z;
  }
  ref.m_updated.assign(c1, std::vector<double>(hw, 0.0));
  ref.l_updated.assign(c1, std::vector<double>(hw, 0.0));
  for (std::size_t c = 0; c < c1; ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t a = 0; a < n; ++a) {
        ref.m_updated[c][p] += ref.a3[p][a] * vm[c][a];
        ref.l_updated[c][p] += ref.a3[p][a] * vl[c][a];
      }
    }
  }
  return ref;
}

inline double grid_diff(const Grid& g, const Tensor& t) {
  double worst = 0.0;
  const auto area = t.numel() / t.dim(0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    for (std::size_t p = 0; p < area; ++p) worst = std::max(worst, std::abs(g[c][p] - t[c * area + p]));
  }
  return worst;
}

}  // namespace refseg::testing
