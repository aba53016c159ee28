#pragma once

#include <vector>

namespace affordrep {

double mean(const std::vector<double>& v);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(const std::vector<double>& v);

double normal_cdf(double x, double mu, double sigma);
double normal_pdf(double x, double mu, double sigma);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// One-sample Kolmogorov-Smirnov test against Normal(mu, sigma).
KsResult ks_test_normal(std::vector<double> samples, double mu, double sigma);
// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_survival(double lambda);

}  // namespace affordrep
