#include "doctest.h"

#include <cmath>
#include <cstring>

#include "onnx_subset.pb.h"

#include "support/fixtures.hpp"

#include "dpguard/classifier.hpp"
#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/onnx_model.hpp"

using namespace dpguard;
using namespace dpguard::classifier;
namespace pb = dpguard_onnx;

namespace {

std::vector<LabeledFeatures> featurize_all(const testing::BrightDark& set) {
  std::vector<LabeledFeatures> out;
  for (std::size_t i = 0; i < set.images.size(); ++i) out.push_back({featurize(set.images[i]), set.labels[i]});
  return out;
}

// ----- a small convolutional graph and a direct evaluation of it -----

struct TinyNet {
  static constexpr int kSide = 6;
  std::vector<float> conv_w;  // [2,3,3,3]
  std::vector<float> conv_b;  // [2]
  std::vector<float> bn_scale, bn_bias, bn_mean, bn_var;  // [2]
  std::vector<float> fc_w;  // [out,2]
  std::vector<float> fc_b;  // [out]
  int outputs = 2;
  float mean[3] = {0.5f, 0.4f, 0.3f};
  float std[3] = {0.2f, 0.25f, 0.3f};
};

TinyNet make_net(std::uint32_t seed, int outputs = 2) {
  Rng rng = make_rng(seed);
  const auto u = [&](double lo, double hi) { return static_cast<float>(lo + (hi - lo) * uniform01(rng)); };
  TinyNet n;
  n.outputs = outputs;
  for (int i = 0; i < 54; ++i) n.conv_w.push_back(u(-0.5, 0.5));
  for (int i = 0; i < 2; ++i) {
    n.conv_b.push_back(u(-0.1, 0.1));
    n.bn_scale.push_back(u(0.5, 1.5));
    n.bn_bias.push_back(u(-0.2, 0.2));
    n.bn_mean.push_back(u(-0.1, 0.1));
    n.bn_var.push_back(u(0.5, 2.0));
  }
  for (int i = 0; i < 2 * outputs; ++i) n.fc_w.push_back(u(-1, 1));
  for (int i = 0; i < outputs; ++i) n.fc_b.push_back(u(-0.3, 0.3));
  return n;
}

void add_tensor(pb::GraphProto* g, const std::string& name, const std::vector<std::int64_t>& dims,
                const std::vector<float>& values, bool raw) {
  auto* t = g->add_initializer();
  t->set_name(name);
  t->set_data_type(pb::TensorProto::FLOAT);
  for (auto d : dims) t->add_dims(d);
  if (raw) {
    std::string bytes(values.size() * 4, '\0');
    std::memcpy(bytes.data(), values.data(), bytes.size());
    t->set_raw_data(bytes);
  } else {
    for (float v : values) t->add_float_data(v);
  }
}

pb::AttributeProto* attr(pb::NodeProto* n, const char* name, pb::AttributeProto::AttributeType type) {
  auto* a = n->add_attribute();
  a->set_name(name);
  a->set_type(type);
  return a;
}

pb::NodeProto* node(pb::GraphProto* g, const char* op, std::vector<std::string> in, const std::string& out) {
  auto* n = g->add_node();
  n->set_op_type(op);
  for (auto& s : in) n->add_input(s);
  n->add_output(out);
  return n;
}

std::string build_model(const TinyNet& net, bool softmax, bool raw) {
  pb::ModelProto m;
  m.set_ir_version(8);
  auto* op = m.add_opset_import();
  op->set_version(13);
  const auto meta = [&](const char* k, const std::string& v) {
    auto* kv = m.add_metadata_props();
    kv->set_key(k);
    kv->set_value(v);
  };
  meta("dpguard.mean", "0.5,0.4,0.3");
  meta("dpguard.std", "0.2,0.25,0.3");
  if (softmax) meta("dpguard.output", "probability");

  auto* g = m.mutable_graph();
  const auto io = [](pb::ValueInfoProto* v, const char* name, std::vector<std::int64_t> dims, bool symbolic_batch) {
    v->set_name(name);
    auto* tt = v->mutable_type()->mutable_tensor_type();
    tt->set_elem_type(pb::TensorProto::FLOAT);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      auto* d = tt->mutable_shape()->add_dim();
      if (i == 0 && symbolic_batch) {
        d->set_dim_param("batch");
      } else {
        d->set_dim_value(dims[i]);
      }
    }
  };
  io(g->add_input(), "image", {1, 3, TinyNet::kSide, TinyNet::kSide}, true);
  io(g->add_output(), "out", {1, net.outputs}, true);

  add_tensor(g, "cw", {2, 3, 3, 3}, net.conv_w, raw);
  add_tensor(g, "cb", {2}, net.conv_b, raw);
  add_tensor(g, "s", {2}, net.bn_scale, false);
  add_tensor(g, "b", {2}, net.bn_bias, false);
  add_tensor(g, "mu", {2}, net.bn_mean, false);
  add_tensor(g, "var", {2}, net.bn_var, false);
  add_tensor(g, "fw", {net.outputs, 2}, net.fc_w, raw);
  add_tensor(g, "fb", {net.outputs}, net.fc_b, false);

  auto* conv = node(g, "Conv", {"image", "cw", "cb"}, "c");
  auto* k = attr(conv, "kernel_shape", pb::AttributeProto::INTS);
  k->add_ints(3);
  k->add_ints(3);
  auto* pads = attr(conv, "pads", pb::AttributeProto::INTS);
  for (int i = 0; i < 4; ++i) pads->add_ints(1);
  node(g, "BatchNormalization", {"c", "s", "b", "mu", "var"}, "n");
  node(g, "Relu", {"n"}, "r");
  auto* pool = node(g, "MaxPool", {"r"}, "p");
  auto* pk = attr(pool, "kernel_shape", pb::AttributeProto::INTS);
  pk->add_ints(2);
  pk->add_ints(2);
  auto* ps = attr(pool, "strides", pb::AttributeProto::INTS);
  ps->add_ints(2);
  ps->add_ints(2);
  node(g, "GlobalAveragePool", {"p"}, "gap");
  node(g, "Flatten", {"gap"}, "f");
  auto* gemm = node(g, "Gemm", {"f", "fw", "fb"}, softmax ? "logits" : "out");
  attr(gemm, "transB", pb::AttributeProto::INT)->set_i(1);
  if (softmax) attr(node(g, "Softmax", {"logits"}, "out"), "axis", pb::AttributeProto::INT)->set_i(-1);
  return m.SerializeAsString();
}

std::vector<double> direct_logits(const TinyNet& net, const Image& img) {
  const int s = TinyNet::kSide;
  std::vector<double> x(3 * s * s);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < s * s; ++i) {
      x[c * s * s + i] = (img.rgb[3 * i + c] / 255.0 - net.mean[c]) / net.std[c];
    }
  }
  std::vector<double> pooled(2);
  for (int oc = 0; oc < 2; ++oc) {
    std::vector<double> act(s * s);
    for (int yy = 0; yy < s; ++yy) {
      for (int xx = 0; xx < s; ++xx) {
        double acc = net.conv_b[oc];
        for (int c = 0; c < 3; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sx < 0 || sy >= s || sx >= s) continue;
              acc += net.conv_w[((oc * 3 + c) * 3 + ky) * 3 + kx] * x[c * s * s + sy * s + sx];
            }
          }
        }
        const double bn = (acc - net.bn_mean[oc]) / std::sqrt(net.bn_var[oc] + 1e-5) * net.bn_scale[oc] +
                          net.bn_bias[oc];
        act[yy * s + xx] = std::max(bn, 0.0);
      }
    }
    double sum = 0;
    for (int py = 0; py < s / 2; ++py) {
      for (int px = 0; px < s / 2; ++px) {
        double mx = -1e300;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) mx = std::max(mx, act[(2 * py + dy) * s + 2 * px + dx]);
        }
        sum += mx;
      }
    }
    pooled[oc] = sum / ((s / 2) * (s / 2));
  }
  std::vector<double> out(net.outputs);
  for (int o = 0; o < net.outputs; ++o) {
    out[o] = net.fc_b[o] + net.fc_w[o * 2] * pooled[0] + net.fc_w[o * 2 + 1] * pooled[1];
  }
  return out;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kRuntime;
}

}  // namespace

TEST_CASE("feature vector layout") {
  const Image img = testing::solid(40, 20, 51, 102, 204);
  const auto f = featurize(img);
  REQUIRE(f.values.size() == kFeatureLength);
  CHECK(kFeatureLength == 1072);
  const double gray = (0.299 * 51 + 0.587 * 102 + 0.114 * 204) / 255.0;
  for (std::size_t i = 0; i < kGrayLength; ++i) CHECK(f.values[i] == doctest::Approx(gray).epsilon(1e-5));
  for (int c = 0; c < 3; ++c) {
    double mass = 0;
    for (int b = 0; b < kHistogramBins; ++b) mass += f.values[kGrayLength + c * kHistogramBins + b];
    CHECK(mass == doctest::Approx(1.0));
  }
  // 51 / 16 = bin 3, 102 / 16 = bin 6, 204 / 16 = bin 12
  CHECK(f.values[kGrayLength + 3] == doctest::Approx(1.0));
  CHECK(f.values[kGrayLength + kHistogramBins + 6] == doctest::Approx(1.0));
  CHECK(f.values[kGrayLength + 2 * kHistogramBins + 12] == doctest::Approx(1.0));
}

TEST_CASE("threshold ties go to DP") {
  CHECK(predict(0.5) == Verdict::kDp);
  CHECK(predict(0.4999) == Verdict::kNonDp);
  CHECK(predict(0.2, 0.2) == Verdict::kDp);
  CHECK(std::string(to_string(Verdict::kDp)) == "DP");
}

TEST_CASE("analytic gradient matches finite differences") {
  const auto data = featurize_all(testing::bright_dark_set(12, 3));
  LogisticModel m;
  Rng rng = make_rng(11);
  for (auto& w : m.weights) w = (uniform01(rng) - 0.5) * 0.2;
  m.bias = 0.1;
  const auto lg = loss_and_gradient(m, data);
  const double h = 1e-6;
  for (std::size_t j : {0u, 17u, 500u, 1023u, 1030u, 1071u}) {
    LogisticModel plus = m, minus = m;
    plus.weights[j] += h;
    minus.weights[j] -= h;
    const double fd = (loss_and_gradient(plus, data).loss - loss_and_gradient(minus, data).loss) / (2 * h);
    CHECK(lg.grad_weights[j] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
  }
  LogisticModel bp = m, bm = m;
  bp.bias += h;
  bm.bias -= h;
  CHECK(lg.grad_bias ==
        doctest::Approx((loss_and_gradient(bp, data).loss - loss_and_gradient(bm, data).loss) / (2 * h)));
}

TEST_CASE("baseline separates bright and dark screens") {
  const auto train = featurize_all(testing::bright_dark_set(60, 1));
  const auto val = featurize_all(testing::bright_dark_set(20, 2));
  TrainReport report;
  const auto scorer = train_baseline(train, val, {}, &report);
  CHECK(report.epoch_loss.size() == 10);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  CHECK(report.best_epoch >= 1);

  const auto test = testing::bright_dark_set(20, 9);
  std::vector<LabeledImage> labeled;
  for (std::size_t i = 0; i < test.images.size(); ++i) labeled.push_back({&test.images[i], test.labels[i]});
  const auto m = evaluate_binary(scorer, labeled);
  CHECK(m.dp.f1 == doctest::Approx(1.0));
  CHECK(m.non_dp.f1 == doctest::Approx(1.0));

  TrainOptions full;
  full.full_batch = true;
  full.learning_rate = 0.5;
  full.epochs = 40;
  const auto fb = train_baseline(train, {}, full);
  CHECK(evaluate_binary(fb, labeled).dp.f1 == doctest::Approx(1.0));

  // same seed, same weights
  const auto again = train_baseline(train, val, {});
  CHECK(again.model().weights == scorer.model().weights);

  std::vector<LabeledFeatures> one_class(train.begin(), train.end());
  std::erase_if(one_class, [](const LabeledFeatures& f) { return f.label == 1; });
  CHECK(kind_of([&] { train_baseline(one_class, {}, {}); }) == ErrorKind::kValidation);
}

TEST_CASE("binary metrics by hand") {
  const std::vector<double> scores = {0.9, 0.8, 0.2, 0.6};
  const std::vector<int> labels = {1, 0, 1, 1};
  const auto m = evaluate_binary(scores, labels);
  CHECK(m.dp.precision == doctest::Approx(2.0 / 3));
  CHECK(m.dp.recall == doctest::Approx(2.0 / 3));
  CHECK(m.dp.f1 == doctest::Approx(2.0 / 3));
  CHECK(m.non_dp.precision == 0.0);
  CHECK(m.non_dp.recall == 0.0);
  CHECK(m.non_dp.f1 == 0.0);
}

TEST_CASE("scorer serialization and scripted scores") {
  LogisticModel model;
  for (std::size_t i = 0; i < model.weights.size(); ++i) model.weights[i] = 0.001 * static_cast<double>(i) - 0.3;
  model.bias = -0.25;
  const LogisticScorer s(model);
  const auto back = LogisticScorer::from_json(s.to_json());
  CHECK(back.model().weights == model.weights);
  CHECK(back.model().bias == model.bias);
  CHECK_THROWS_AS(LogisticScorer::from_json(R"({"weights":[1,2],"bias":0})"), Error);

  const Image a = testing::tagged_image(1), b = testing::tagged_image(2);
  CHECK(raster_digest(a) != raster_digest(b));
  CHECK(raster_digest(a) == raster_digest(testing::tagged_image(1)));
  ScriptedScorer scripted(0.1);
  scripted.set(a, 0.9);
  CHECK(scripted.score(a) == 0.9);
  CHECK(scripted.score(b) == 0.1);
}

TEST_CASE("convolutional graph matches a direct evaluation") {
  testing::TempDir tmp;
  const TinyNet net = make_net(5);
  for (bool raw : {false, true}) {
    CAPTURE(raw);
    write_file_atomic(tmp.file("net.onnx"), build_model(net, false, raw));
    const auto scorer = onnx::load_external_model(tmp.file("net.onnx"));
    const auto* os = dynamic_cast<const onnx::OnnxScorer*>(scorer.get());
    REQUIRE(os != nullptr);
    CHECK(os->graph().input_shape() == std::vector<std::int64_t>{-1, 3, 6, 6});
    CHECK(os->graph().output_count() == 1);
    for (std::uint32_t seed = 0; seed < 8; ++seed) {
      const Image img = testing::noise_image(seed, 6, 6, 0, 255);
      const auto logits = direct_logits(net, img);
      const double expected = 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
      CHECK(scorer->score(img) == doctest::Approx(expected).epsilon(1e-5));
    }
  }

  // softmax head read as class probabilities
  write_file_atomic(tmp.file("soft.onnx"), build_model(net, true, false));
  const auto soft = onnx::load_external_model(tmp.file("soft.onnx"));
  const Image img = testing::noise_image(77, 6, 6, 0, 255);
  const auto logits = direct_logits(net, img);
  CHECK(soft->score(img) == doctest::Approx(1.0 / (1.0 + std::exp(logits[0] - logits[1]))).epsilon(1e-5));

  // larger inputs are area-resized to the declared size
  const Image big = testing::noise_image(78, 24, 12, 0, 255);
  const double p = soft->score(big);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("external model contract violations") {
  testing::TempDir tmp;
  write_file_atomic(tmp.file("three.onnx"), build_model(make_net(6, 3), false, false));
  CHECK(kind_of([&] { onnx::load_external_model(tmp.file("three.onnx")); }) == ErrorKind::kShape);
  CHECK(kind_of([&] { onnx::load_external_model(tmp.file("absent.onnx")); }) == ErrorKind::kIo);
  write_file_atomic(tmp.file("junk.onnx"), "\xff\xff\xff not a model");
  CHECK_THROWS_AS(onnx::load_external_model(tmp.file("junk.onnx")), Error);
}

TEST_CASE("exported baseline reloads with the same scores") {
  const auto train = featurize_all(testing::bright_dark_set(40, 4));
  const auto scorer = train_baseline(train, {}, {});
  testing::TempDir tmp;
  onnx::export_baseline(scorer, tmp.file("baseline.onnx"));
  const auto loaded = onnx::load_external_model(tmp.file("baseline.onnx"));
  const auto probe = testing::bright_dark_set(10, 8);
  for (const auto& img : probe.images) CHECK(loaded->score(img) == doctest::Approx(scorer.score(img)).epsilon(1e-4));
  const Image odd = testing::noise_image(3, 50, 31, 0, 255);
  CHECK(loaded->score(odd) == doctest::Approx(scorer.score(odd)).epsilon(1e-4));
}
