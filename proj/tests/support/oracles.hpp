#pragma once

#include <cstdint>
#include <vector>

// Scalar reference implementations in plain double loops. Nothing here
// touches tensors, so they share no code with the library under test.
namespace oracle {

using Row = std::vector<double>;
using Matrix = std::vector<Row>;

double cross_entropy(const Row& logits, std::int64_t label, const std::vector<double>& class_weights);

// src[v][b] and tgt[v][b] are logit rows for v in {0, 1, 2}.
double mixed_cross_entropy(const std::vector<Matrix>& src, const std::vector<Matrix>& tgt,
                           const std::vector<std::int64_t>& y, const std::vector<std::int64_t>& y_tilde,
                           const std::vector<double>& area, const std::vector<double>& class_weights, bool strict);

// Loss of one anchor against the pool; negative when the anchor has no
// positive (caller skips it).
double supcon_anchor(const Matrix& features, const std::vector<std::int64_t>& labels, std::size_t anchor, double tau,
                     bool* has_positive);

double supcon(const Matrix& features, const std::vector<std::int64_t>& labels, const std::vector<bool>& anchors,
              double tau);

// views[v][b], v in 0..4 = (f1, f2, f~1, f~2, f_m).
double mixed_supcon(const std::vector<Matrix>& views, const std::vector<std::int64_t>& y,
                    const std::vector<std::int64_t>& y_tilde, const std::vector<double>& area, double tau);

Row normalized(const Row& v);

}  // namespace oracle
