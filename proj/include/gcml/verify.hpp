// Property suites runnable from the command line: group axioms, layer
// equivariance under p4m, and finite-difference gradient checks.
#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcml/tensor.hpp"

namespace gcml {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0;      // measured error, or failure count
  double tolerance = 0;
  std::string detail;
};

/// Closure, associativity, identity and inverse over every pair/triple of
/// p4 (64 triples) and p4m (512 triples), plus the matrix and grid-action
/// homomorphisms.
std::vector<CheckResult> verify_group();

/// Every equivariant layer against every element of p4m on `seeds` random
/// inputs, in f32 (1e-5 relative L2) and f64 (1e-12).
std::vector<CheckResult> verify_equivariance(int seeds = 20);

/// Central finite differences (step 1e-4) against reverse mode in f64 for
/// every layer type; max relative error must stay below 1e-6.
std::vector<CheckResult> verify_gradients();

/// |a - b| / max(|a|, |b|, floor) maximized over all entries.
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor);

/// ||a - b||_2 / ||b||_2 (0 when both vanish).
template <typename T>
double relative_l2(const std::vector<T>& a, const std::vector<T>& b);

/// Compares reverse-mode and central-difference gradients of
/// sum(f(inputs) * w) for a fixed random w, over every entry of every input.
double gradient_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                      std::vector<Tensor<double>> inputs, double step = 1e-4, std::uint64_t seed = 99);

bool print_results(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace gcml
