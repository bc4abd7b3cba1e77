#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "hypothetica/csv.hpp"
#include "hypothetica/design.hpp"
#include "hypothetica/error.hpp"
#include "hypothetica/glm.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

enum class WeightSource { fitted_logistic, supplied_true_probabilities };

struct IpwSpec {
    // all_data: the A_k model is fitted to everyone with past A's as
    // covariates; ice_free: only to subjects ICE-free through k-1.
    Population population = Population::all_data;
    ArmPooling pooling = ArmPooling::pooled;
    WeightSource weight_source = WeightSource::fitted_logistic;
    // Weights above this quantile of the retained weights are capped. Off by default.
    std::optional<double> truncation_quantile;

    void validate() const {
        if (truncation_quantile && !(*truncation_quantile > 0.5 && *truncation_quantile <= 1.0))
            throw ConfigError("truncation quantile must lie in (0.5, 1]");
    }
};

/// P(A_k = 0 | history) for every subject (rows) and visit k = 1..K (columns).
struct IceFreeProbabilities {
    std::vector<std::vector<double>> values;

    double at(std::size_t subject, int k) const { return values.at(subject).at(static_cast<std::size_t>(k - 1)); }
};

/// Probabilities below this are treated as positivity violations.
inline constexpr double kPositivityFloor = 1e-12;

/// Quantile with linear interpolation between order statistics (the
/// "type 7" definition). `sorted` must be ascending and non-empty.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace ipw_detail {

// Either a fitted model or the degenerate limit of a stratum without
// events (probability of an ICE exactly 0) or with only events (exactly 1).
struct IceModel {
    std::variant<FittedLogisticModel, double> model;

    double prob_ice(const FeatureSet& fs, const History& h) const {
        if (const auto* fit = std::get_if<FittedLogisticModel>(&model)) return predict(*fit, fs, h);
        return std::get<double>(model);
    }
};

}  // namespace ipw_detail

/// Unstabilised inverse-probability weights W_i = 2 * prod_k 1 / P(A_k = 0 | history_i)
/// for subjects ICE-free through K; nullopt for everyone else. The factor 2
/// is the inverse of the 1:1 randomisation probability.
inline std::vector<std::optional<double>> compute_weights(const TrialDataset& data, const IpwSpec& spec,
                                                          const IceFreeProbabilities* supplied = nullptr) {
    spec.validate();
    const int K = data.K();
    std::vector<std::optional<double>> weights(data.size());
    std::vector<History> hist;
    hist.reserve(data.size());
    for (const auto& s : data) hist.push_back(History::observed(s));

    std::vector<std::vector<double>> p_free(data.size(), std::vector<double>(static_cast<std::size_t>(K), 1.0));
    if (spec.weight_source == WeightSource::supplied_true_probabilities) {
        if (!supplied) throw ConfigError("supplied-probability weights requested but no probabilities given");
        if (supplied->values.size() != data.size())
            throw DimensionError("supplied probabilities have " + std::to_string(supplied->values.size()) +
                                 " rows for " + std::to_string(data.size()) + " subjects");
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!ice_free_through(data[i], K)) continue;
            if (supplied->values[i].size() != static_cast<std::size_t>(K))
                throw DimensionError("supplied probabilities row " + std::to_string(i + 1) + " has wrong length");
            for (int k = 1; k <= K; ++k) p_free[i][static_cast<std::size_t>(k - 1)] = supplied->at(i, k);
        }
    } else {
        const bool all = spec.population == Population::all_data;
        const bool pooled = spec.pooling == ArmPooling::pooled;
        for (int group : fitting_groups(spec.pooling)) {
            for (int k = 1; k <= K; ++k) {
                const auto fs = FeatureSet::history(data.schema(), k, all ? k - 1 : 0, pooled);
                std::vector<const History*> rows;
                std::vector<double> response;
                for (std::size_t i = 0; i < data.size(); ++i) {
                    const auto& s = data[i];
                    if (!in_group(s, group) || !s.a[static_cast<std::size_t>(k)] || !fs.observed(hist[i])) continue;
                    if (!all && !ice_free_through(s, k - 1)) continue;
                    rows.push_back(&hist[i]);
                    response.push_back(static_cast<double>(*s.a[static_cast<std::size_t>(k)]));
                }
                const std::string what =
                    "ICE model for a" + std::to_string(k) + " (" + group_label(group) + ", k=" + std::to_string(k) + ")";
                if (rows.empty()) throw EstimationError(what + ": empty fitting stratum");
                ipw_detail::IceModel model;
                const auto events = std::count(response.begin(), response.end(), 1.0);
                if (events == 0) {
                    model.model = 0.0;
                } else if (static_cast<std::size_t>(events) == response.size()) {
                    model.model = 1.0;
                } else {
                    if (rows.size() < min_rows(fs.size() + 1))
                        throw EstimationError(what + ": " + std::to_string(rows.size()) +
                                              " usable subjects, need at least " + std::to_string(min_rows(fs.size() + 1)));
                    const Eigen::Map<const Eigen::VectorXd> y(response.data(), static_cast<Eigen::Index>(response.size()));
                    auto fit = logistic_fit(fs.design(rows), y);
                    if (!fit.converged)
                        throw ConvergenceError(what + " did not converge after " + std::to_string(fit.iterations) +
                                               " iterations: " + fit.diagnostic);
                    model.model = std::move(fit);
                }
                for (std::size_t i = 0; i < data.size(); ++i) {
                    if (!in_group(data[i], group) || !ice_free_through(data[i], K)) continue;
                    p_free[i][static_cast<std::size_t>(k - 1)] = 1.0 - model.prob_ice(fs, hist[i]);
                }
            }
        }
    }

    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!ice_free_through(data[i], K)) continue;
        double w = 2.0;
        for (int k = 1; k <= K; ++k) {
            const double p = p_free[i][static_cast<std::size_t>(k - 1)];
            if (!(p >= kPositivityFloor) || p > 1.0)
                throw PositivityError("probability of remaining ICE-free is " + std::to_string(p) + " for subject " +
                                          std::to_string(i + 1) + " at k=" + std::to_string(k),
                                      i, k);
            w /= p;
        }
        weights[i] = w;
    }

    if (spec.truncation_quantile) {
        std::vector<double> retained;
        for (const auto& w : weights)
            if (w) retained.push_back(*w);
        if (!retained.empty()) {
            std::sort(retained.begin(), retained.end());
            const double cap = quantile_sorted(retained, *spec.truncation_quantile);
            for (auto& w : weights)
                if (w) w = std::min(*w, cap);
        }
    }
    return weights;
}

/// Hajek-weighted mean of Y among each arm's ICE-free subjects, given weights.
inline EstimateResult weighted_arm_means(const TrialDataset& data, const std::vector<std::optional<double>>& weights) {
    double num[2] = {0.0, 0.0};
    double den[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        if (!weights[i] || !s.y) continue;
        const int arm = s.arm();
        num[arm] += *weights[i] * *s.y;
        den[arm] += *weights[i];
        ++count[arm];
    }
    for (int arm : {0, 1})
        if (count[arm] == 0 || !(den[arm] > 0.0))
            throw EstimationError("no ICE-free subject with positive weight in arm a0=" + std::to_string(arm));
    return EstimateResult::from_means(num[1] / den[1], num[0] / den[0], count[1], count[0]);
}

inline EstimateResult ipw_estimate(const TrialDataset& data, const IpwSpec& spec,
                                   const IceFreeProbabilities* supplied = nullptr) {
    return weighted_arm_means(data, compute_weights(data, spec, supplied));
}

/// Probability file: header p1,...,pK and one row per subject, in dataset order.
inline IceFreeProbabilities read_probabilities_csv(std::istream& in, int K) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("probability file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto names = csv_detail::split(line);
    if (names.size() != static_cast<std::size_t>(K))
        throw SchemaError("probability file needs " + std::to_string(K) + " columns p1..pK");
    for (int k = 1; k <= K; ++k)
        if (names[static_cast<std::size_t>(k - 1)] != "p" + std::to_string(k))
            throw SchemaError("expected probability column p" + std::to_string(k));
    IceFreeProbabilities out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = csv_detail::split(line);
        if (cells.size() != static_cast<std::size_t>(K))
            throw ParseError("expected " + std::to_string(K) + " cells", line_no, 1);
        std::vector<double> row;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c].empty()) {
                row.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            const double v = csv_detail::parse_double(cells[c], line_no, c + 1);
            if (v < 0.0 || v > 1.0) throw ParseError("probability outside [0, 1]", line_no, c + 1);
            row.push_back(v);
        }
        out.values.push_back(std::move(row));
    }
    return out;
}

inline IceFreeProbabilities read_probabilities_csv(const std::string& path, int K) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_probabilities_csv(in, K);
}

inline void write_probabilities_csv(const IceFreeProbabilities& probs, int K, std::ostream& out) {
    for (int k = 1; k <= K; ++k) out << (k > 1 ? "," : "") << "p" << k;
    out << '\n';
    for (const auto& row : probs.values) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            if (!std::isnan(row[c])) out << csv_detail::format_double(row[c]);
        }
        out << '\n';
    }
}

}  // namespace hypothetica
