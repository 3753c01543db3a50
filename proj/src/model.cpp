#include "nbids/model.hpp"

#include "nbids/errors.hpp"
#include "nbids/rng.hpp"
#include "nbids/text.hpp"

#include <algorithm>

namespace nbids {

namespace {

std::string block_name(const char* prefix, std::size_t i) { return prefix + std::to_string(i + 1); }

Tensor transpose_last_two(const Tensor& x) {
  const std::size_t B = x.dim(0), R = x.dim(1), C = x.dim(2);
  Tensor y({B, C, R});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) y(b, c, r) = x(b, r, c);
  return y;
}

std::uint64_t dropout_seed(std::uint64_t base, std::string_view layer) {
  return Rng(base, "model.dropout").child(layer).next_u64();
}

bool parse_bool(const std::string& v, const std::string& key) {
  const auto l = text::to_lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

double parse_real(const std::string& v, const std::string& key) {
  auto d = text::parse_double(v);
  if (!d) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return *d;
}

std::size_t parse_count(const std::string& v, const std::string& key) {
  auto d = text::parse_int(v);
  if (!d || *d <= 0) throw ConfigError("config key '" + key + "': expected a positive integer, got '" + v + "'");
  return static_cast<std::size_t>(*d);
}

} // namespace

std::vector<std::size_t> derived_lengths(const ModelConfig& cfg) {
  std::vector<std::size_t> lengths;
  std::size_t len = cfg.input_len;
  for (const auto& b : cfg.conv_blocks) {
    len = len == 0 ? 0 : conv_output_length(len, b.kernel, 1, cfg.padding);
    len = len == 0 ? 0 : pool_output_length(len, cfg.pool_size, cfg.pool_stride);
    lengths.push_back(len);
  }
  return lengths;
}

void validate(const ModelConfig& cfg) {
  if (cfg.input_len == 0 || cfg.input_channels == 0 || cfg.n_classes < 2 || cfg.lstm_hidden == 0 ||
      cfg.attention_dk == 0 || cfg.conv_blocks.empty())
    throw ConfigError("model config: sizes must be positive, at least one conv block and two classes");
  for (const auto& b : cfg.conv_blocks)
    if (b.filters == 0 || b.kernel == 0) throw ConfigError("model config: conv filters and kernel must be positive");
  for (auto u : cfg.dense_units)
    if (u == 0) throw ConfigError("model config: dense units must be positive");
  for (double r : {cfg.conv_dropout, cfg.dense_dropout})
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("model config: dropout rates must lie in [0, 1)");
  if (!(cfg.bn_momentum > 0.0 && cfg.bn_momentum < 1.0) || !(cfg.bn_epsilon > 0.0))
    throw ConfigError("model config: batchnorm momentum must lie in (0,1) and epsilon be positive");
  const auto lengths = derived_lengths(cfg);
  if (std::find(lengths.begin(), lengths.end(), 0) != lengths.end())
    throw ConfigError("model config: sequence collapses to zero length, derived lengths after each "
                      "block are [" + text::join_sizes(lengths) + "] from input length " +
                      std::to_string(cfg.input_len));
}

std::map<std::string, std::string> to_key_values(const ModelConfig& cfg) {
  std::vector<std::size_t> filters, kernels;
  for (const auto& b : cfg.conv_blocks) {
    filters.push_back(b.filters);
    kernels.push_back(b.kernel);
  }
  return {
      {"input_len", std::to_string(cfg.input_len)},
      {"input_channels", std::to_string(cfg.input_channels)},
      {"conv_filters", text::join_sizes(filters)},
      {"conv_kernels", text::join_sizes(kernels)},
      {"padding", cfg.padding == Padding::same ? "same" : "valid"},
      {"pool_size", std::to_string(cfg.pool_size)},
      {"pool_stride", std::to_string(cfg.pool_stride)},
      {"conv_dropout", text::format_double(cfg.conv_dropout)},
      {"lstm_hidden", std::to_string(cfg.lstm_hidden)},
      {"attention_dk", std::to_string(cfg.attention_dk)},
      {"dense_units", text::join_sizes(cfg.dense_units)},
      {"dense_dropout", text::format_double(cfg.dense_dropout)},
      {"n_classes", std::to_string(cfg.n_classes)},
      {"bn_before_activation", cfg.bn_before_activation ? "true" : "false"},
      {"bn_momentum", text::format_double(cfg.bn_momentum)},
      {"bn_epsilon", text::format_double(cfg.bn_epsilon)},
  };
}

ModelConfig model_config_from(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("input_len")) cfg.input_len = parse_count(*v, "input_len");
  if (auto v = get("input_channels")) cfg.input_channels = parse_count(*v, "input_channels");
  auto filters = get("conv_filters");
  auto kernels = get("conv_kernels");
  if (filters || kernels) {
    std::vector<std::size_t> f, k;
    for (const auto& b : cfg.conv_blocks) {
      f.push_back(b.filters);
      k.push_back(b.kernel);
    }
    if (filters) f = text::parse_size_list(*filters);
    if (kernels) k = text::parse_size_list(*kernels);
    if (f.size() != k.size())
      throw ConfigError("config: conv_filters and conv_kernels must list the same number of blocks");
    cfg.conv_blocks.clear();
    for (std::size_t i = 0; i < f.size(); ++i) cfg.conv_blocks.push_back({f[i], k[i]});
  }
  if (auto v = get("padding")) {
    if (*v == "same")
      cfg.padding = Padding::same;
    else if (*v == "valid")
      cfg.padding = Padding::valid;
    else
      throw ConfigError("config key 'padding': expected same or valid, got '" + *v + "'");
  }
  if (auto v = get("pool_size")) cfg.pool_size = parse_count(*v, "pool_size");
  if (auto v = get("pool_stride")) cfg.pool_stride = parse_count(*v, "pool_stride");
  if (auto v = get("conv_dropout")) cfg.conv_dropout = parse_real(*v, "conv_dropout");
  if (auto v = get("lstm_hidden")) cfg.lstm_hidden = parse_count(*v, "lstm_hidden");
  if (auto v = get("attention_dk")) cfg.attention_dk = parse_count(*v, "attention_dk");
  if (auto v = get("dense_units")) cfg.dense_units = text::parse_size_list(*v);
  if (auto v = get("dense_dropout")) cfg.dense_dropout = parse_real(*v, "dense_dropout");
  if (auto v = get("n_classes")) cfg.n_classes = parse_count(*v, "n_classes");
  if (auto v = get("bn_before_activation")) cfg.bn_before_activation = parse_bool(*v, "bn_before_activation");
  if (auto v = get("bn_momentum")) cfg.bn_momentum = parse_real(*v, "bn_momentum");
  if (auto v = get("bn_epsilon")) cfg.bn_epsilon = parse_real(*v, "bn_epsilon");
  return cfg;
}

std::vector<ParamRef> ModelParams::entries() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto conv = block_name("conv", i);
    auto bn = block_name("bn", i);
    out.push_back({conv + ".kernel", &blocks[i].conv.kernels, true});
    out.push_back({conv + ".bias", &blocks[i].conv.bias, true});
    out.push_back({bn + ".gamma", &blocks[i].bn.gamma, true});
    out.push_back({bn + ".beta", &blocks[i].bn.beta, true});
    out.push_back({bn + ".running_mean", &blocks[i].bn.running_mean, false});
    out.push_back({bn + ".running_var", &blocks[i].bn.running_var, false});
  }
  for (auto [dir, d] : {std::pair{"forward", &lstm.forward}, std::pair{"backward", &lstm.backward}}) {
    const std::string base = std::string("bilstm.") + dir;
    out.push_back({base + ".W_x", &d->W_x, true});
    out.push_back({base + ".W_h", &d->W_h, true});
    out.push_back({base + ".b", &d->b, true});
  }
  out.push_back({"attention.W_a", &attention.W_a, true});
  out.push_back({"attention.q", &attention.q, true});
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    auto name = block_name("dense", i);
    out.push_back({name + ".W", &hidden[i].W, true});
    out.push_back({name + ".b", &hidden[i].b, true});
  }
  out.push_back({"head.W", &head.W, true});
  out.push_back({"head.b", &head.b, true});
  return out;
}

std::vector<ConstParamRef> ModelParams::entries() const {
  std::vector<ConstParamRef> out;
  for (auto& e : const_cast<ModelParams*>(this)->entries()) out.push_back({e.name, e.tensor, e.trainable});
  return out;
}

std::size_t ModelParams::parameter_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& e : entries())
    if (e.trainable || !trainable_only) n += e.tensor->size();
  return n;
}

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng root(seed, "model.init");
  ModelParams p;
  p.config = cfg;
  std::size_t channels = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
    const auto& spec = cfg.conv_blocks[i];
    ConvBlock block;
    block.conv.kernels = Tensor({spec.filters, channels, spec.kernel});
    block.conv.bias = Tensor({spec.filters}, 0.0);
    block.conv.stride = 1;
    block.conv.padding = cfg.padding;
    auto rng = root.child(block_name("conv", i));
    glorot_uniform(block.conv.kernels, channels * spec.kernel, spec.filters * spec.kernel, rng);
    block.bn = BatchNormParams::identity(spec.filters);
    block.bn.momentum = cfg.bn_momentum;
    block.bn.epsilon = cfg.bn_epsilon;
    p.blocks.push_back(std::move(block));
    channels = spec.filters;
  }
  auto lstm_rng = root.child("bilstm");
  p.lstm = init_lstm(channels, cfg.lstm_hidden, lstm_rng);
  auto att_rng = root.child("attention");
  p.attention = init_attention(2 * cfg.lstm_hidden, cfg.attention_dk, att_rng);
  std::size_t width = 2 * cfg.lstm_hidden;
  for (std::size_t i = 0; i < cfg.dense_units.size(); ++i) {
    DenseParams d{Tensor({width, cfg.dense_units[i]}), Tensor({cfg.dense_units[i]}, 0.0)};
    auto rng = root.child(block_name("dense", i));
    glorot_uniform(d.W, width, cfg.dense_units[i], rng);
    p.hidden.push_back(std::move(d));
    width = cfg.dense_units[i];
  }
  p.head = {Tensor({width, cfg.n_classes}), Tensor({cfg.n_classes}, 0.0)};
  auto head_rng = root.child("head");
  glorot_uniform(p.head.W, width, cfg.n_classes, head_rng);
  return p;
}

ForwardResult model_forward(const ModelParams& p, const Tensor& x, const ForwardOptions& opts) {
  const auto& cfg = p.config;
  if (x.rank() != 3 || x.dim(1) != cfg.input_channels || x.dim(2) != cfg.input_len)
    throw ShapeError("model_forward: expected input [B, " + std::to_string(cfg.input_channels) + ", " +
                     std::to_string(cfg.input_len) + "], got " + shape_str(x.shape()));
  const bool train = opts.mode == Mode::train;
  ForwardResult r;
  ModelCache& cache = r.cache;
  cache.mode = opts.mode;

  Tensor h = x;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& blk = p.blocks[i];
    BlockCache bc;
    Tensor z = conv1d_forward(h, blk.conv, train ? &bc.conv : nullptr);
    Tensor act;
    if (cfg.bn_before_activation) {
      auto bn = batchnorm1d(z, blk.bn, opts.mode);
      bc.pre_act = std::move(bn.y);
      act = activate(Activation::relu, bc.pre_act);
      bc.bn = std::move(bn.ctx);
      if (train) {
        r.bn_running.emplace_back(std::move(bn.running_mean), std::move(bn.running_var));
        r.bn_batch.emplace_back(std::move(bn.batch_mean), std::move(bn.batch_var));
      }
    } else {
      bc.pre_act = std::move(z);
      auto bn = batchnorm1d(activate(Activation::relu, bc.pre_act), blk.bn, opts.mode);
      act = std::move(bn.y);
      bc.bn = std::move(bn.ctx);
      if (train) {
        r.bn_running.emplace_back(std::move(bn.running_mean), std::move(bn.running_var));
        r.bn_batch.emplace_back(std::move(bn.batch_mean), std::move(bn.batch_var));
      }
    }
    bc.pool = maxpool1d(act, cfg.pool_size, cfg.pool_stride);
    bc.drop.rate = cfg.conv_dropout;
    bc.drop.rng_seed = dropout_seed(opts.dropout_seed, block_name("conv", i));
    h = dropout(bc.pool.y, bc.drop, opts.mode);
    r.block_shapes.push_back(h.shape());
    if (train) {
      bc.pool.y = Tensor(); // only argmax and the input shape are needed for backward
      cache.blocks.push_back(std::move(bc));
    }
  }

  Tensor seq = transpose_last_two(h);
  auto lstm = bilstm_forward(seq, p.lstm);
  r.sequence_shape = lstm.H_seq.shape();
  auto att = attention_forward(lstm.H_seq, p.attention);
  Tensor v = att.a;
  for (std::size_t i = 0; i < p.hidden.size(); ++i) {
    DenseCache dc;
    Tensor z = dense(v, p.hidden[i]);
    Tensor a = activate(Activation::relu, z);
    dc.drop.rate = cfg.dense_dropout;
    dc.drop.rng_seed = dropout_seed(opts.dropout_seed, block_name("dense", i));
    Tensor out = dropout(a, dc.drop, opts.mode);
    if (train) {
      dc.input = std::move(v);
      dc.pre_act = std::move(z);
      cache.hidden.push_back(std::move(dc));
    }
    v = std::move(out);
  }
  r.logits = dense(v, p.head);
  r.probs = softmax(r.logits);
  if (train) {
    cache.lstm = std::move(lstm);
    cache.attention = std::move(att);
    cache.head_input = std::move(v);
    cache.logits = r.logits;
    cache.valid = true;
  }
  return r;
}

void apply_running_stats(ModelParams& p, const ForwardResult& fwd) {
  if (fwd.bn_running.empty()) return;
  if (fwd.bn_running.size() != p.blocks.size())
    throw UsageError("apply_running_stats: forward result does not match the model");
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    p.blocks[i].bn.running_mean = fwd.bn_running[i].first;
    p.blocks[i].bn.running_var = fwd.bn_running[i].second;
  }
}

ParamGrads model_backward_from_logits(const ModelParams& p, const ModelCache& cache,
                                      const Tensor& dlogits) {
  if (!cache.valid || cache.mode != Mode::train)
    throw UsageError("model_backward: requires the cache of a train-mode forward pass");
  ParamGrads g;
  auto head = dense_backward(cache.head_input, p.head, dlogits);
  g["head.W"] = std::move(head.dW);
  g["head.b"] = std::move(head.db);
  Tensor dv = std::move(head.dx);
  for (std::size_t i = p.hidden.size(); i-- > 0;) {
    const auto& dc = cache.hidden[i];
    Tensor da = dropout_backward(dc.drop, dv);
    Tensor dz = activation_backward(Activation::relu, dc.pre_act, da);
    auto dg = dense_backward(dc.input, p.hidden[i], dz);
    auto name = block_name("dense", i);
    g[name + ".W"] = std::move(dg.dW);
    g[name + ".b"] = std::move(dg.db);
    dv = std::move(dg.dx);
  }
  auto ag = attention_backward(cache.attention, p.attention, dv);
  g["attention.W_a"] = std::move(ag.dW_a);
  g["attention.q"] = std::move(ag.dq);
  auto lg = bilstm_backward(cache.lstm, p.lstm, ag.dV);
  g["bilstm.forward.W_x"] = std::move(lg.forward.dW_x);
  g["bilstm.forward.W_h"] = std::move(lg.forward.dW_h);
  g["bilstm.forward.b"] = std::move(lg.forward.db);
  g["bilstm.backward.W_x"] = std::move(lg.backward.dW_x);
  g["bilstm.backward.W_h"] = std::move(lg.backward.dW_h);
  g["bilstm.backward.b"] = std::move(lg.backward.db);

  Tensor dh = transpose_last_two(lg.dx);
  for (std::size_t i = p.blocks.size(); i-- > 0;) {
    const auto& bc = cache.blocks[i];
    const auto& blk = p.blocks[i];
    Tensor dpool = dropout_backward(bc.drop, dh);
    Tensor dact = maxpool1d_backward(bc.pool, dpool);
    Tensor dz;
    BatchNormGrads bg;
    if (p.config.bn_before_activation) {
      Tensor dbn = activation_backward(Activation::relu, bc.pre_act, dact);
      bg = batchnorm1d_backward(bc.bn, blk.bn, dbn);
      dz = std::move(bg.dx);
    } else {
      bg = batchnorm1d_backward(bc.bn, blk.bn, dact);
      dz = activation_backward(Activation::relu, bc.pre_act, bg.dx);
    }
    auto cg = conv1d_backward(bc.conv, blk.conv, dz);
    g[block_name("conv", i) + ".kernel"] = std::move(cg.dw);
    g[block_name("conv", i) + ".bias"] = std::move(cg.db);
    g[block_name("bn", i) + ".gamma"] = std::move(bg.dgamma);
    g[block_name("bn", i) + ".beta"] = std::move(bg.dbeta);
    dh = std::move(cg.dx);
  }
  return g;
}

BackwardResult model_backward(const ModelParams& p, const ModelCache& cache,
                              std::span<const int> labels) {
  if (!cache.valid || cache.mode != Mode::train)
    throw UsageError("model_backward: requires the cache of a train-mode forward pass");
  auto loss = sparse_ce_loss(cache.logits, labels);
  return {loss.loss, model_backward_from_logits(p, cache, loss.dlogits)};
}

} // namespace nbids
