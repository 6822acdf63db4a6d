#include "ldlva/model.hpp"

#include <cmath>

namespace ldlva::model {

using numerics::require_same_size;

nlohmann::json to_json(const ModelDims& dims) {
  return nlohmann::json{{"input_dim", dims.input_dim},
                        {"encoder_hidden", dims.encoder_hidden},
                        {"feature_dim", dims.feature_dim},
                        {"num_classes", dims.num_classes},
                        {"calibration_hidden1", dims.calibration_hidden1},
                        {"calibration_hidden2", dims.calibration_hidden2}};
}

ModelDims model_dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.input_dim = j.at("input_dim").get<std::size_t>();
  d.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
  d.feature_dim = j.at("feature_dim").get<std::size_t>();
  d.num_classes = j.at("num_classes").get<std::size_t>();
  d.calibration_hidden1 = j.at("calibration_hidden1").get<std::size_t>();
  d.calibration_hidden2 = j.at("calibration_hidden2").get<std::size_t>();
  return d;
}

namespace {

template <class Params, class Ref, class Fn>
void collect(Params& p, std::vector<Ref>& out, Fn&& make) {
  for (std::size_t l = 0; l < p.encoder.layers.size(); ++l) {
    auto& layer = p.encoder.layers[l];
    const std::string prefix = "encoder." + std::to_string(l);
    out.push_back(make(prefix + ".weight", Component::kEncoder, layer.weight.data(),
                       layer.weight.rows(), layer.weight.cols()));
    out.push_back(make(prefix + ".bias", Component::kEncoder, std::span(layer.bias), layer.bias.size(), 1));
  }
  auto& head = p.classifier.head;
  out.push_back(make("classifier.weight", Component::kClassifier, head.weight.data(), head.weight.rows(),
                     head.weight.cols()));
  out.push_back(make("classifier.bias", Component::kClassifier, std::span(head.bias), head.bias.size(), 1));
  auto& cal = p.calibration;
  auto dense = [&](const std::string& name, auto& layer) {
    out.push_back(make(name + ".weight", Component::kCalibration, layer.weight.data(), layer.weight.rows(),
                       layer.weight.cols()));
    out.push_back(make(name + ".bias", Component::kCalibration, std::span(layer.bias), layer.bias.size(), 1));
  };
  auto norm = [&](const std::string& name, auto& ln) {
    out.push_back(make(name + ".gain", Component::kCalibration, std::span(ln.gain), ln.gain.size(), 1));
    out.push_back(make(name + ".bias", Component::kCalibration, std::span(ln.bias), ln.bias.size(), 1));
  };
  dense("calibration.hidden1", cal.hidden1);
  norm("calibration.norm1", cal.norm1);
  dense("calibration.hidden2", cal.hidden2);
  norm("calibration.norm2", cal.norm2);
  dense("calibration.out", cal.out);
}

Dense make_dense(std::size_t in, std::size_t out, Rng* rng) {
  Dense d{Matrix(out, in), Vector(out, 0.0)};
  if (rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : d.weight.data()) w = rng->uniform(-bound, bound);
    for (double& b : d.bias) b = rng->uniform(-bound, bound);
  }
  return d;
}

Dense zeros_dense(const Dense& d) { return Dense{Matrix(d.out(), d.in()), Vector(d.out(), 0.0)}; }

// grad_W += g x^T, grad_b += g; returns W^T g.
Vector dense_backward(const Dense& layer, std::span<const double> x, std::span<const double> g, Dense& grad) {
  require_same_size(g.size(), layer.out(), "dense_backward");
  Vector dx(layer.in(), 0.0);
  for (std::size_t r = 0; r < layer.out(); ++r) {
    const double gr = g[r];
    grad.bias[r] += gr;
    auto grow = grad.weight.row(r);
    const auto wrow = layer.weight.row(r);
    for (std::size_t c = 0; c < layer.in(); ++c) {
      grow[c] += gr * x[c];
      dx[c] += wrow[c] * gr;
    }
  }
  return dx;
}

void relu_inplace(Vector& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  collect(params, out, [](std::string name, Component c, std::span<double> d, std::size_t r, std::size_t k) {
    return TensorRef{std::move(name), c, d, r, k};
  });
  return out;
}

std::vector<ConstTensorRef> tensors(const ModelParams& params) {
  std::vector<ConstTensorRef> out;
  collect(params, out,
          [](std::string name, Component c, std::span<const double> d, std::size_t r, std::size_t k) {
            return ConstTensorRef{std::move(name), c, d, r, k};
          });
  return out;
}

ModelParams init_model(const ModelDims& dims, Rng& rng) {
  if (dims.input_dim == 0 || dims.feature_dim == 0 || dims.num_classes == 0 ||
      dims.calibration_hidden1 == 0 || dims.calibration_hidden2 == 0) {
    throw ValidationError("dims", "model dimensions must be >= 1");
  }
  ModelParams p;
  std::size_t in = dims.input_dim;
  for (std::size_t width : dims.encoder_hidden) {
    if (width == 0) throw ValidationError("encoder_hidden", "encoder widths must be >= 1");
    p.encoder.layers.push_back(make_dense(in, width, &rng));
    in = width;
  }
  p.encoder.layers.push_back(make_dense(in, dims.feature_dim, &rng));
  p.classifier.head = make_dense(dims.feature_dim, dims.num_classes, &rng);

  auto& cal = p.calibration;
  cal.hidden1 = make_dense(2 * dims.feature_dim, dims.calibration_hidden1, &rng);
  cal.norm1 = {Vector(dims.calibration_hidden1, 1.0), Vector(dims.calibration_hidden1, 0.0)};
  cal.hidden2 = make_dense(dims.calibration_hidden1, dims.calibration_hidden2, &rng);
  cal.norm2 = {Vector(dims.calibration_hidden2, 1.0), Vector(dims.calibration_hidden2, 0.0)};
  cal.out = make_dense(dims.calibration_hidden2, 1, &rng);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  for (const auto& layer : params.encoder.layers) z.encoder.layers.push_back(zeros_dense(layer));
  z.classifier.head = zeros_dense(params.classifier.head);
  const auto& c = params.calibration;
  z.calibration.hidden1 = zeros_dense(c.hidden1);
  z.calibration.norm1 = {Vector(c.norm1.gain.size(), 0.0), Vector(c.norm1.bias.size(), 0.0)};
  z.calibration.hidden2 = zeros_dense(c.hidden2);
  z.calibration.norm2 = {Vector(c.norm2.gain.size(), 0.0), Vector(c.norm2.bias.size(), 0.0)};
  z.calibration.out = zeros_dense(c.out);
  return z;
}

Vector encode_forward(const EncoderParams& enc, std::span<const double> x, EncoderTrace& trace) {
  if (enc.layers.empty()) throw InternalStateError("encoder has no layers");
  if (x.size() != enc.layers.front().in()) {
    throw DimensionError("encode: input has dim " + std::to_string(x.size()) + ", expected " +
                         std::to_string(enc.layers.front().in()));
  }
  trace.inputs.clear();
  trace.pre.clear();
  Vector h(x.begin(), x.end());
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    trace.inputs.push_back(h);
    Vector z = numerics::affine(enc.layers[l].weight, enc.layers[l].bias, h);
    trace.pre.push_back(z);
    if (l + 1 < enc.layers.size()) relu_inplace(z);
    h = std::move(z);
  }
  return h;
}

Vector encode(const EncoderParams& enc, std::span<const double> x) {
  EncoderTrace trace;
  return encode_forward(enc, x, trace);
}

Vector encode_backward(const EncoderParams& enc, const EncoderTrace& trace, std::span<const double> grad_v,
                       EncoderParams& grad) {
  if (trace.pre.size() != enc.layers.size()) throw InternalStateError("encode_backward: stale trace");
  Vector g(grad_v.begin(), grad_v.end());
  for (std::size_t l = enc.layers.size(); l-- > 0;) {
    if (l + 1 < enc.layers.size()) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(trace.pre[l][i] > 0.0)) g[i] = 0.0;
      }
    }
    g = dense_backward(enc.layers[l], trace.inputs[l], g, grad.layers[l]);
  }
  return g;
}

Vector logits(const ClassifierParams& cls, std::span<const double> v) {
  if (v.size() != cls.head.in()) {
    throw DimensionError("classify: feature has dim " + std::to_string(v.size()) + ", expected " +
                         std::to_string(cls.head.in()));
  }
  return numerics::affine(cls.head.weight, cls.head.bias, v);
}

Vector classify(const ClassifierParams& cls, std::span<const double> v) {
  return numerics::softmax(logits(cls, v));
}

Vector classify_backward(const ClassifierParams& cls, std::span<const double> v,
                         std::span<const double> grad_logits, ClassifierParams& grad) {
  return dense_backward(cls.head, v, grad_logits, grad.head);
}

double calibration_forward(const CalibrationParams& cal, std::span<const double> v_i,
                           std::span<const double> v_k, CalibrationTrace& t) {
  if (v_i.size() + v_k.size() != cal.hidden1.in() || v_i.size() != v_k.size()) {
    throw DimensionError("calibration_score: feature dims do not match the calibration input");
  }
  t.input.assign(v_i.begin(), v_i.end());
  t.input.insert(t.input.end(), v_k.begin(), v_k.end());

  t.pre1 = numerics::affine(cal.hidden1.weight, cal.hidden1.bias, t.input);
  t.normed1 = numerics::layer_norm_forward(t.pre1, cal.norm1.gain, cal.norm1.bias, kLayerNormEps, t.norm1);
  t.act1 = t.normed1;
  relu_inplace(t.act1);

  t.pre2 = numerics::affine(cal.hidden2.weight, cal.hidden2.bias, t.act1);
  t.normed2 = numerics::layer_norm_forward(t.pre2, cal.norm2.gain, cal.norm2.bias, kLayerNormEps, t.norm2);
  t.act2 = t.normed2;
  relu_inplace(t.act2);

  t.logit = numerics::affine(cal.out.weight, cal.out.bias, t.act2)[0];
  t.zeta = numerics::sigmoid(t.logit);
  return t.zeta;
}

double calibration_score(const CalibrationParams& cal, std::span<const double> v_i,
                         std::span<const double> v_k) {
  CalibrationTrace trace;
  return calibration_forward(cal, v_i, v_k, trace);
}

std::pair<Vector, Vector> calibration_backward(const CalibrationParams& cal, const CalibrationTrace& t,
                                               double grad_logit, CalibrationParams& grad) {
  if (t.input.size() != cal.hidden1.in()) throw InternalStateError("calibration_backward: stale trace");
  const double g_out[1] = {grad_logit};
  Vector g = dense_backward(cal.out, t.act2, g_out, grad.out);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(t.normed2[i] > 0.0)) g[i] = 0.0;
  }
  g = numerics::layer_norm_backward(g, cal.norm2.gain, t.norm2, grad.norm2.gain, grad.norm2.bias);
  g = dense_backward(cal.hidden2, t.act1, g, grad.hidden2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(t.normed1[i] > 0.0)) g[i] = 0.0;
  }
  g = numerics::layer_norm_backward(g, cal.norm1.gain, t.norm1, grad.norm1.gain, grad.norm1.bias);
  g = dense_backward(cal.hidden1, t.input, g, grad.hidden1);
  const auto half = static_cast<std::ptrdiff_t>(g.size() / 2);
  return {Vector(g.begin(), g.begin() + half), Vector(g.begin() + half, g.end())};
}

Vector predict(const ModelParams& params, std::span<const double> x) {
  return classify(params.classifier, encode(params.encoder, x));
}

}  // namespace ldlva::model
