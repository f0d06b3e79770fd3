#include "gcml/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "gcml/attention.hpp"
#include "gcml/gconv.hpp"
#include "gcml/group.hpp"
#include "gcml/metric.hpp"
#include "gcml/model.hpp"
#include "gcml/ops.hpp"

namespace gcml {

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

template <typename T>
double relative_l2(const std::vector<T>& a, const std::vector<T>& b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    diff += d * d;
    ref += static_cast<double>(b[i]) * b[i];
  }
  if (ref == 0) return diff == 0 ? 0.0 : INFINITY;
  return std::sqrt(diff / ref);
}

template double relative_l2(const std::vector<float>&, const std::vector<float>&);
template double relative_l2(const std::vector<double>&, const std::vector<double>&);

bool print_results(std::ostream& out, const std::vector<CheckResult>& results) {
  bool all = true;
  char buf[64];
  for (const auto& r : results) {
    all = all && r.passed;
    std::snprintf(buf, sizeof buf, "%.3e (tol %.1e)", r.value, r.tolerance);
    out << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  " << buf;
    if (!r.detail.empty()) out << "  " << r.detail;
    out << '\n';
  }
  return all;
}

std::vector<CheckResult> verify_group() {
  std::vector<CheckResult> out;
  for (GroupKind kind : {GroupKind::p4, GroupKind::p4m}) {
    const GroupSpec g(kind);
    const int n = g.order();
    const std::string prefix = to_string(kind) + " ";
    long failures = 0, checked = 0;

    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const int c = g.compose(a, b);
        failures += (c < 0 || c >= n);
        ++checked;
      }
    out.push_back({prefix + "closure (" + std::to_string(checked) + " pairs)", failures == 0,
                   static_cast<double>(failures), 0, ""});

    failures = checked = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) {
          failures += g.compose(g.compose(a, b), c) != g.compose(a, g.compose(b, c));
          ++checked;
        }
    out.push_back({prefix + "associativity (" + std::to_string(checked) + " triples)", failures == 0,
                   static_cast<double>(failures), 0, ""});

    failures = 0;
    for (int a = 0; a < n; ++a) failures += g.compose(0, a) != a || g.compose(a, 0) != a;
    out.push_back({prefix + "identity", failures == 0, static_cast<double>(failures), 0, ""});

    failures = 0;
    for (int a = 0; a < n; ++a) failures += g.compose(a, g.inverse(a)) != 0 || g.compose(g.inverse(a), a) != 0;
    out.push_back({prefix + "inverse", failures == 0, static_cast<double>(failures), 0, ""});

    failures = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const auto ma = g.matrix(a), mb = g.matrix(b), mc = g.matrix(g.compose(a, b));
        const Mat2 prod{ma[0] * mb[0] + ma[1] * mb[2], ma[0] * mb[1] + ma[1] * mb[3],
                        ma[2] * mb[0] + ma[3] * mb[2], ma[2] * mb[1] + ma[3] * mb[3]};
        failures += prod != mc;
      }
    out.push_back({prefix + "matrix homomorphism", failures == 0, static_cast<double>(failures), 0, ""});

    failures = 0;
    for (int k : {3, 4, 5})
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const auto ga = act_on_grid(g, a, k), gb = act_on_grid(g, b, k), gab = act_on_grid(g, g.compose(a, b), k);
          for (std::size_t i = 0; i < gab.index_map.size(); ++i) failures += ga.index_map[gb.index_map[i]] != gab.index_map[i];
        }
    out.push_back({prefix + "grid action homomorphism", failures == 0, static_cast<double>(failures), 0, ""});
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Prng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
void randomize(Tensor<T>& t, Prng& rng, double lo = -1, double hi = 1) {
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
}

// Worst relative L2 of layer(g x) against g layer(x) over seeds and p4m.
template <typename T>
double equivariance_error(int seeds, bool lifted_input,
                          const std::function<Tensor<T>(const Tensor<T>&)>& layer,
                          const std::function<void(Prng&)>& reinit, const Shape& input_shape) {
  const GroupSpec spec(GroupKind::p4m);
  double worst = 0;
  for (int s = 0; s < seeds; ++s) {
    Prng rng(1000 + static_cast<std::uint64_t>(s));
    reinit(rng);
    const auto x = random_tensor<T>(input_shape, rng);
    const auto y = layer(x);
    for (int g = 0; g < spec.order(); ++g) {
      const auto gx = lifted_input ? rotate_feature_map(x, spec, g) : transform_spatial(x, spec, g);
      const auto lhs = layer(gx);
      const auto rhs = rotate_feature_map(y, spec, g);
      worst = std::max(worst, relative_l2(lhs.values(), rhs.values()));
    }
  }
  return worst;
}

template <typename T>
void equivariance_suite(int seeds, double tol, const std::string& dtype, std::vector<CheckResult>& out) {
  const GroupSpec spec(GroupKind::p4m);
  const std::size_t n = 2, c = 3, o = 4, hw = 8;
  const Shape image{n, c, hw, hw};
  const Shape lifted{n, c, 8, hw, hw};
  auto record = [&](const std::string& name, double err) {
    out.push_back({name + " [" + dtype + ", p4m x " + std::to_string(seeds) + " seeds]", err <= tol, err, tol, ""});
  };

  for (int k : {1, 3, 5}) {
    LiftingConv<T> lift(spec, c, o, k);
    record("lift_conv k=" + std::to_string(k),
        equivariance_error<T>(
            seeds, false, [&](const Tensor<T>& x) { return lift.forward(x); },
            [&](Prng& rng) {
              randomize(lift.weight(), rng);
              randomize(lift.bias(), rng);
            },
            image));
    GroupConv<T> gconv(spec, c, o, k);
    record("gconv k=" + std::to_string(k),
        equivariance_error<T>(
            seeds, true, [&](const Tensor<T>& x) { return gconv.forward(x); },
            [&](Prng& rng) {
              randomize(gconv.weight(), rng);
              randomize(gconv.bias(), rng);
            },
            lifted));
  }

  GroupBatchNorm<T> bn(c);
  auto reinit_bn = [&](Prng& rng) {
    randomize(bn.gamma(), rng, 0.5, 1.5);
    randomize(bn.beta(), rng);
    bn.stats().running_mean.assign(c, T(0));
    bn.stats().running_var.assign(c, T(1));
    for (auto& v : bn.stats().running_mean) v = static_cast<T>(rng.uniform(-0.5, 0.5));
    for (auto& v : bn.stats().running_var) v = static_cast<T>(rng.uniform(0.5, 2.0));
    bn.stats().initialized = true;
  };
  record("group_batchnorm train",
      equivariance_error<T>(seeds, true, [&](const Tensor<T>& x) { return bn.forward(x, Mode::train); },
                            reinit_bn, lifted));
  record("group_batchnorm eval",
      equivariance_error<T>(seeds, true, [&](const Tensor<T>& x) { return bn.forward(x, Mode::eval); },
                            reinit_bn, lifted));

  record("gspatial_maxpool",
      equivariance_error<T>(seeds, true, [](const Tensor<T>& x) { return gspatial_maxpool(x); },
                            [](Prng&) {}, lifted));

  ChannelAttention<T> att(c, 1);
  record("channel_attention + apply_attention",
      equivariance_error<T>(
          seeds, true, [&](const Tensor<T>& x) { return apply_attention(att.gate(x), x); },
          [&](Prng& rng) { att.init_he_uniform(rng); }, lifted));

  record("relu",
      equivariance_error<T>(seeds, true, [](const Tensor<T>& x) { return relu(x); }, [](Prng&) {}, lifted));

  ResidualBlock<T> block(spec, c, o);
  record("residual block (train)",
      equivariance_error<T>(
          seeds, true, [&](const Tensor<T>& x) { return block.forward(x, Mode::train); },
          [&](Prng& rng) { block.init(rng); }, lifted));
}

}  // namespace

std::vector<CheckResult> verify_equivariance(int seeds) {
  std::vector<CheckResult> out;
  equivariance_suite<float>(seeds, 1e-5, "f32", out);
  equivariance_suite<double>(seeds, 1e-12, "f64", out);
  return out;
}

double gradient_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                      std::vector<Tensor<double>> inputs, double step, std::uint64_t seed) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> probe;
  {
    const auto y = f(inputs);
    Prng rng(seed);
    probe = random_tensor<double>(y.shape(), rng);
    sum(mul(y, probe)).backward();
  }
  auto objective = [&] {
    NoGradGuard guard;
    return sum(mul(f(inputs), probe)).item();
  };
  std::vector<double> analytic, numeric;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      analytic.push_back(t.has_grad() ? t.grad()[i] : 0.0);
      const double saved = t.data()[i];
      t.data()[i] = saved + step;
      const double up = objective();
      t.data()[i] = saved - step;
      const double down = objective();
      t.data()[i] = saved;
      numeric.push_back((up - down) / (2 * step));
    }
  }
  return max_relative_error(analytic, numeric, 1e-3);
}

std::vector<CheckResult> verify_gradients() {
  using D = double;
  using V = std::vector<Tensor<D>>;
  const double tol = 1e-6;
  std::vector<CheckResult> out;
  auto record = [&](const std::string& name, double err) { out.push_back({name + " [f64]", err < tol, err, tol, ""}); };
  Prng rng(2718);
  auto r = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor<D>(std::move(s), rng, lo, hi); };

  record("add/sub/mul/scale", gradient_check([](const V& v) { return scale(mul(add(v[0], v[1]), sub(v[0], v[1])), 0.5); },
                                          {r({3, 4}), r({3, 4})}));
  record("sum/mean", gradient_check([](const V& v) { return add(sum(mul(v[0], v[0])), mean(v[0])); }, {r({2, 5})}));
  record("relu", gradient_check([](const V& v) { return relu(v[0]); }, {r({4, 6})}));
  record("sigmoid", gradient_check([](const V& v) { return sigmoid(v[0]); }, {r({4, 6}, -3, 3)}));
  record("reshape", gradient_check([](const V& v) { return mul(v[0].reshape({6, 4}), v[1]); }, {r({4, 6}), r({6, 4})}));
  record("conv2d stride 1 pad 1",
      gradient_check([](const V& v) { return conv2d(v[0], v[1], std::optional<Tensor<D>>(v[2]), 1, 1); },
                     {r({2, 3, 5, 5}), r({4, 3, 3, 3}), r({4})}));
  record("conv2d stride 2 pad 0",
      gradient_check([](const V& v) { return conv2d(v[0], v[1], std::optional<Tensor<D>>(v[2]), 2, 0); },
                     {r({2, 2, 7, 7}), r({3, 2, 3, 3}), r({3})}));
  record("conv2d 1x1",
      gradient_check([](const V& v) { return conv2d(v[0], v[1], std::optional<Tensor<D>>(), 1, 0); },
                     {r({2, 3, 4, 4}), r({2, 3, 1, 1})}));
  record("maxpool2d", gradient_check([](const V& v) { return maxpool2d(v[0], 2, 2); }, {r({2, 3, 6, 6})}));
  record("global_avgpool", gradient_check([](const V& v) { return global_avgpool(v[0]); }, {r({2, 3, 4, 5})}));
  record("linear", gradient_check([](const V& v) { return linear(v[0], v[1], v[2]); }, {r({3, 5}), r({4, 5}), r({4})}));
  {
    BatchNormStats<D> stats;
    record("batchnorm train", gradient_check(
                               [&](const V& v) { return batchnorm(v[0], v[1], v[2], stats, D(1e-5), D(0.1), Mode::train); },
                               {r({4, 3, 3, 3}), r({3}, 0.5, 1.5), r({3})}));
    record("batchnorm eval", gradient_check(
                              [&](const V& v) { return batchnorm(v[0], v[1], v[2], stats, D(1e-5), D(0.1), Mode::eval); },
                              {r({4, 3, 3, 3}), r({3}, 0.5, 1.5), r({3})}));
  }
  {
    const std::vector<int> labels{0, 2, 1, 2};
    record("cross_entropy", gradient_check([&](const V& v) { return cross_entropy(v[0], std::span<const int>(labels)); },
                                        {r({4, 3}, -2, 2)}));
  }
  {
    const std::vector<std::size_t> rows{2, 0, 2, 1};
    record("select_rows", gradient_check([&](const V& v) { return select_rows(v[0], std::span<const std::size_t>(rows)); },
                                      {r({3, 4})}));
    const std::vector<std::size_t> idx{5, 1, 1, 0, 3};
    record("gather", gradient_check([&](const V& v) { return gather(v[0], std::span<const std::size_t>(idx), Shape{5}); },
                                 {r({6})}));
  }
  record("l2_normalize_rows", gradient_check([](const V& v) { return l2_normalize_rows(v[0]); }, {r({3, 5})}));
  record("scale_channels", gradient_check([](const V& v) { return scale_channels(v[0], v[1]); },
                                       {r({2, 3, 2, 4, 4}), r({2, 3})}));
  record("triplet_loss", gradient_check([](const V& v) { return triplet_loss(v[0], v[1], v[2], D(0.5)); },
                                     {r({5, 4}), r({5, 4}), r({5, 4})}));
  record("contrastive_loss",
      gradient_check([](const V& v) { return contrastive_loss(v[0], v[1], {true, false, true, false}, D(2.0)); },
                     {r({4, 3}), r({4, 3})}));

  for (GroupKind kind : {GroupKind::p4, GroupKind::p4m}) {
    const GroupSpec spec(kind);
    const std::string tag = " " + to_string(kind);
    const std::size_t g = static_cast<std::size_t>(spec.order());
    {
      LiftingConv<D> lift(spec, 2, 3, 3);
      lift.init_he_uniform(rng);
      randomize(lift.bias(), rng);
      record("lift_conv" + tag, gradient_check([&](const V& v) { return lift.forward(v[0]); },
                                            {r({2, 2, 5, 5}), lift.weight(), lift.bias()}));
    }
    {
      GroupConv<D> gc(spec, 2, 2, 3);
      gc.init_he_uniform(rng);
      randomize(gc.bias(), rng);
      record("gconv" + tag, gradient_check([&](const V& v) { return gc.forward(v[0]); },
                                        {r({2, 2, g, 4, 4}), gc.weight(), gc.bias()}));
    }
    {
      GroupBatchNorm<D> bn(2);
      randomize(bn.gamma(), rng, 0.5, 1.5);
      randomize(bn.beta(), rng);
      record("group_batchnorm" + tag, gradient_check([&](const V& v) { return bn.forward(v[0], Mode::train); },
                                                  {r({2, 2, g, 3, 3}), bn.gamma(), bn.beta()}));
    }
    record("group_pool" + tag, gradient_check([](const V& v) { return group_pool(v[0]); }, {r({2, 2, g, 3, 3})}));
    record("gspatial_maxpool" + tag,
        gradient_check([](const V& v) { return gspatial_maxpool(v[0]); }, {r({2, 2, g, 4, 4})}));
    {
      ChannelAttention<D> att(4, 2);
      att.init_he_uniform(rng);
      randomize(att.b1(), rng);
      randomize(att.b2(), rng);
      record("channel_attention" + tag, gradient_check([&](const V& v) { return att.forward(v[0]); },
                                                    {r({2, 4, g, 3, 3}), att.w1(), att.b1(), att.w2(), att.b2()}));
    }
  }
  {
    ModelConfig cfg;
    cfg.variant = Variant::p4;
    cfg.attention = true;
    cfg.stages = {{1, 4}, {1, 6}};
    cfg.input_size = 8;
    cfg.num_classes = 3;
    cfg.embed_dim = 4;
    Model<D> model(cfg);
    record("model embedding (input)",
        gradient_check([&](const V& v) { return model.forward_embed(v[0]); }, {r({2, 1, 8, 8})}));
    record("model classification (heads)", gradient_check([&](const V& v) { return model.forward_classify(v[0]); },
                                                       {r({2, 1, 8, 8}), model.classifier_weight(),
                                                        model.classifier_bias()}));
  }
  return out;
}

}  // namespace gcml
