#pragma once

#include <dynsurv/dynsurv.hpp>

#include <random>

namespace testutil {

using namespace dynsurv;

inline CovariateSpec continuous_spec(std::size_t p) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return CovariateSpec(names, std::vector<CovariateKind>(p, CovariateKind::Continuous));
}

inline Dataset make_dataset(const CovariateSpec& spec, const std::vector<std::vector<double>>& x,
                            const std::vector<double>& time, const std::vector<int>& event, int period = 0) {
    Dataset d;
    d.spec = spec;
    d.period = period;
    for (std::size_t i = 0; i < time.size(); ++i)
        d.records.push_back({SubjectId{i + 1}, x.empty() ? std::vector<double>{} : x[i], time[i], event[i] != 0, period});
    return d;
}

// Exponential PH data with censoring at `censor`.
inline Dataset exp_ph_data(std::size_t n, const std::vector<double>& beta, double lambda, double censor,
                           std::uint64_t seed, bool binary_first = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto spec = continuous_spec(beta.size());
    std::vector<std::vector<double>> x;
    std::vector<double> time;
    std::vector<int> event;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi;
        double eta = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            const double v = (binary_first && j == 0) ? (unif(rng) < 0.5 ? 1.0 : 0.0) : norm(rng);
            xi.push_back(v);
            eta += beta[j] * v;
        }
        const double t = -std::log(1.0 - unif(rng)) / (lambda * std::exp(eta));
        x.push_back(xi);
        time.push_back(std::min(t, censor));
        event.push_back(t < censor ? 1 : 0);
    }
    return make_dataset(spec, x, time, event);
}

}  // namespace testutil
