#pragma once

// Embedding extraction, plug-and-play concatenation, a logistic-regression
// linear probe, metrics, and 2D PCA projection of embedding tables.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "switchtab/csv.hpp"
#include "switchtab/error.hpp"
#include "switchtab/model.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/rng.hpp"

namespace switchtab {

struct EmbeddingTable {
    std::size_t n = 0;
    std::size_t z_width = 0;
    std::size_t e_width = 0;
    std::vector<double> z;  // n x z_width
    std::vector<double> s;  // n x e_width, in (0,1)
    std::vector<double> m;  // n x e_width, in (0,1)
    std::optional<std::vector<double>> labels;

    std::vector<double> s_row(std::size_t r) const {
        return {s.begin() + r * e_width, s.begin() + (r + 1) * e_width};
    }
};

// Uncorrupted inputs through encode and decouple; rows keep dataset order.
inline EmbeddingTable embed(const SwitchTabModel& model, const FeatureMatrix& matrix) {
    if (matrix.M != model.config().feature_dim)
        throw DataError("embed: matrix width does not match the model");
    std::vector<std::size_t> rows(matrix.n);
    std::iota(rows.begin(), rows.end(), 0);
    Tensor z = model.encode(batch_tensor(matrix, rows));
    auto [s, m] = model.decouple(z);
    EmbeddingTable table;
    table.n = matrix.n;
    table.z_width = z.cols();
    table.e_width = s.cols();
    table.z = z.values();
    table.s = s.values();
    table.m = m.values();
    table.labels = matrix.labels;
    return table;
}

// x_concat = x (+) s: raw features first, salient embedding second.
inline std::vector<double> concat_plug_and_play(const std::vector<double>& x,
                                                const std::vector<double>& s) {
    std::vector<double> out;
    out.reserve(x.size() + s.size());
    out.insert(out.end(), x.begin(), x.end());
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

inline std::string embedding_table_to_csv(const EmbeddingTable& t) {
    std::vector<std::string> header{"row_id"};
    for (std::size_t j = 0; j < t.z_width; ++j) header.push_back("z_" + std::to_string(j));
    for (std::size_t j = 0; j < t.e_width; ++j) header.push_back("s_" + std::to_string(j));
    for (std::size_t j = 0; j < t.e_width; ++j) header.push_back("m_" + std::to_string(j));
    if (t.labels) header.push_back("label");
    std::string out = csv::to_line(header);
    for (std::size_t r = 0; r < t.n; ++r) {
        std::vector<std::string> fields{std::to_string(r)};
        for (std::size_t j = 0; j < t.z_width; ++j)
            fields.push_back(format_double(t.z[r * t.z_width + j]));
        for (std::size_t j = 0; j < t.e_width; ++j)
            fields.push_back(format_double(t.s[r * t.e_width + j]));
        for (std::size_t j = 0; j < t.e_width; ++j)
            fields.push_back(format_double(t.m[r * t.e_width + j]));
        if (t.labels) fields.push_back(format_double((*t.labels)[r]));
        out += csv::to_line(fields);
    }
    return out;
}

// --------------------------------------------------------------------------
// linear probe: multinomial logistic regression, full-batch gradient descent

struct ProbeConfig {
    double lr = 0.1;
    std::size_t iterations = 500;
    double l2 = 1e-4;
};

struct ProbeModel {
    std::size_t in_width = 0;
    std::size_t n_classes = 0;
    std::vector<double> weight;  // in_width x n_classes
    std::vector<double> bias;    // n_classes

    std::vector<double> scores(const std::vector<double>& features) const {
        if (features.size() != in_width) throw DataError("probe: feature width mismatch");
        std::vector<double> out(bias);
        for (std::size_t d = 0; d < in_width; ++d) {
            const double x = features[d];
            for (std::size_t c = 0; c < n_classes; ++c) out[c] += x * weight[d * n_classes + c];
        }
        return out;
    }

    std::size_t predict(const std::vector<double>& features) const {
        const auto sc = scores(features);
        return static_cast<std::size_t>(std::max_element(sc.begin(), sc.end()) - sc.begin());
    }

    // probability of class 1; binary probes only
    double positive_score(const std::vector<double>& features) const {
        if (n_classes != 2) throw DataError("probe: positive_score needs a binary probe");
        const auto sc = scores(features);
        const double d = sc[1] - sc[0];
        return d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    }
};

inline ProbeModel train_probe(const std::vector<std::vector<double>>& features,
                              const std::vector<int>& labels, std::size_t n_classes,
                              ProbeConfig cfg = {}) {
    if (features.size() < 2) throw DataError("probe: need at least two samples");
    if (features.size() != labels.size()) throw DataError("probe: one label per sample");
    if (n_classes < 2) throw DataError("probe: need at least two classes");
    const std::size_t n = features.size();
    const std::size_t d = features.front().size();
    if (d == 0) throw DataError("probe: need at least one feature");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= n_classes)
            throw DataError("probe: label out of range");

    ProbeModel probe{d, n_classes, std::vector<double>(d * n_classes, 0.0),
                     std::vector<double>(n_classes, 0.0)};
    std::vector<double> probs(n_classes);
    std::vector<double> gw(d * n_classes), gb(n_classes);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto sc = probe.scores(features[i]);
            double mx = sc[0];
            for (double v : sc) mx = std::max(mx, v);
            double sum = 0.0;
            for (std::size_t c = 0; c < n_classes; ++c) {
                probs[c] = std::exp(sc[c] - mx);
                sum += probs[c];
            }
            for (std::size_t c = 0; c < n_classes; ++c) {
                const double delta =
                    probs[c] / sum - (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0);
                gb[c] += delta;
                for (std::size_t f = 0; f < d; ++f)
                    gw[f * n_classes + c] += delta * features[i][f];
            }
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < gw.size(); ++j)
            probe.weight[j] -= cfg.lr * (gw[j] * inv_n + cfg.l2 * probe.weight[j]);
        for (std::size_t c = 0; c < n_classes; ++c) probe.bias[c] -= cfg.lr * gb[c] * inv_n;
    }
    return probe;
}

// --------------------------------------------------------------------------
// metrics

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw DataError("accuracy: prediction/label count mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Mann-Whitney AUC via average ranks; ties earn half credit. Exactly equal
// to the all-pairs count because rank sums only involve dyadic rationals.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("auc: score/label count mismatch");
    std::size_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y == 1) ++pos;
        else if (y == 0) ++neg;
        else throw DataError("auc: labels must be binary 0/1");
    }
    if (pos == 0 || neg == 0)
        throw DataError("auc is undefined with a single class present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double rmse(const std::vector<double>& predictions, const std::vector<double>& targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw DataError("rmse: prediction/target count mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(predictions.size()));
}

// --------------------------------------------------------------------------
// 2D PCA projection (power iteration with deflation)

struct Pca2 {
    std::vector<double> coords;      // n x 2
    double explained[2] = {0.0, 0.0};  // fraction of total variance per component
    std::vector<double> components;  // 2 x d, sign-normalized
};

namespace detail {

inline void pca_sign_normalize(std::vector<double>& v) {
    for (double x : v) {
        if (x > 1e-12) return;
        if (x < -1e-12) {
            for (double& y : v) y = -y;
            return;
        }
    }
}

}  // namespace detail

inline Pca2 pca2(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    if (n < 2) throw DataError("pca2: need at least two rows");
    const std::size_t d = rows.front().size();
    for (const auto& r : rows)
        if (r.size() != d) throw DataError("pca2: ragged input");

    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (double& v : mean) v /= static_cast<double>(n);

    // sample covariance
    std::vector<double> cov(d * d, 0.0);
    for (const auto& r : rows)
        for (std::size_t a = 0; a < d; ++a) {
            const double ca = r[a] - mean[a];
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += ca * (r[b] - mean[b]);
        }
    for (double& v : cov) v /= static_cast<double>(n - 1);

    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];

    Pca2 out;
    out.coords.assign(n * 2, 0.0);
    out.components.assign(2 * d, 0.0);
    if (trace <= 1e-300) return out;  // zero-variance input

    Rng rng(0xC0FFEE);
    std::vector<double> work = cov;
    for (std::size_t comp = 0; comp < 2 && comp < d; ++comp) {
        std::vector<double> v(d);
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        for (double& x : v) x /= norm;
        // convergence is linear in the eigenvalue ratio; clustered spectra
        // need far more than a few hundred sweeps to reach 1e-6 agreement
        // with a dense eigendecomposition
        std::vector<double> next(d);
        for (std::size_t it = 0; it < 20000; ++it) {
            for (std::size_t a = 0; a < d; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b < d; ++b) acc += work[a * d + b] * v[b];
                next[a] = acc;
            }
            norm = std::sqrt(std::inner_product(next.begin(), next.end(), next.begin(), 0.0));
            if (norm <= 1e-300) break;  // deflated matrix vanished
            for (double& x : next) x /= norm;
            double drift = 0.0;
            for (std::size_t j = 0; j < d; ++j) drift += std::abs(next[j] - v[j]);
            v = next;
            if (drift < 1e-13) break;
        }
        double lambda = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b < d; ++b) acc += work[a * d + b] * v[b];
            lambda += v[a] * acc;
        }
        if (lambda < 0.0) lambda = 0.0;
        detail::pca_sign_normalize(v);
        for (std::size_t j = 0; j < d; ++j) out.components[comp * d + j] = v[j];
        out.explained[comp] = lambda / trace;
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) work[a * d + b] -= lambda * v[a] * v[b];
    }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t comp = 0; comp < 2; ++comp) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                acc += (rows[i][j] - mean[j]) * out.components[comp * d + j];
            out.coords[i * 2 + comp] = acc;
        }
    return out;
}

// --------------------------------------------------------------------------
// projection export

inline std::string projection_to_csv(const Pca2& p, const std::vector<std::string>& groups) {
    std::string out = csv::to_line({"row_id", "pc1", "pc2", "group"});
    for (std::size_t i = 0; i * 2 < p.coords.size(); ++i)
        out += csv::to_line({std::to_string(i), format_double(p.coords[i * 2]),
                             format_double(p.coords[i * 2 + 1]),
                             i < groups.size() ? groups[i] : ""});
    return out;
}

// Fixed 800x600 scatter, one color per group (two groups expected).
inline std::string projection_to_svg(const Pca2& p, const std::vector<std::string>& groups) {
    const std::size_t n = p.coords.size() / 2;
    double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        lo_x = std::min(lo_x, p.coords[i * 2]);
        hi_x = std::max(hi_x, p.coords[i * 2]);
        lo_y = std::min(lo_y, p.coords[i * 2 + 1]);
        hi_y = std::max(hi_y, p.coords[i * 2 + 1]);
    }
    const double span_x = hi_x - lo_x > 0 ? hi_x - lo_x : 1.0;
    const double span_y = hi_y - lo_y > 0 ? hi_y - lo_y : 1.0;
    std::vector<std::string> palette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::vector<std::string> seen;
    std::string out =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\">\n";
    for (std::size_t i = 0; i < n; ++i) {
        const std::string group = i < groups.size() ? groups[i] : "";
        std::size_t gi = 0;
        while (gi < seen.size() && seen[gi] != group) ++gi;
        if (gi == seen.size()) seen.push_back(group);
        const double x = 40.0 + (p.coords[i * 2] - lo_x) / span_x * 720.0;
        const double y = 560.0 - (p.coords[i * 2 + 1] - lo_y) / span_y * 520.0;
        out += "  <circle cx=\"" + format_double(x) + "\" cy=\"" + format_double(y) +
               "\" r=\"3\" fill=\"" + palette[gi % palette.size()] + "\"/>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace switchtab
