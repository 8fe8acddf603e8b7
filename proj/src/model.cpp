#include "graphsail/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace graphsail {

namespace {
using json = nlohmann::json;

void xavier_fill(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : m.data()) v = rng.uniform(-limit, limit);
}
}  // namespace

ModelState init_model(std::uint32_t n_users, std::uint32_t n_items, std::size_t dim, int layers,
                      Rng rng) {
  if (dim < 1) throw ConfigError("init_model: dim must be >= 1");
  if (layers != 0 && layers != 1) throw ConfigError("init_model: layers must be 0 or 1");
  ModelState m;
  m.dim = dim;
  m.layers = layers;
  m.e_user = Matrix(n_users, dim);
  m.e_item = Matrix(n_items, dim);
  xavier_fill(m.e_user, n_users, dim, rng);
  xavier_fill(m.e_item, n_items, dim, rng);
  if (layers == 1) {
    m.w_user = Matrix(dim, 2 * dim);
    m.w_item = Matrix(dim, 2 * dim);
    xavier_fill(m.w_user, 2 * dim, dim, rng);
    xavier_fill(m.w_item, 2 * dim, dim, rng);
  }
  return m;
}

namespace {

// Fills concat and out from nodes / nbr_ids / has_nbrs already present in b.
void run_forward(const ModelState& m, ForwardBatch& b) {
  const std::size_t d = m.dim;
  const Matrix& self_tab = m.table(b.side);
  b.out = Matrix(b.nodes.size(), d);

  if (m.layers == 0) {
    parallel_for(b.nodes.size(), [&](std::size_t k) {
      std::memcpy(b.out.row(k), self_tab.row(b.nodes[k]), d * sizeof(double));
    });
    return;
  }

  const Matrix& nbr_tab = m.table(other_side(b.side));
  const Matrix& w = m.weight(b.side);
  b.concat = Matrix(b.nodes.size(), 2 * d);
  parallel_for(b.nodes.size(), [&](std::size_t k) {
    double* x = b.concat.row(k);
    std::memcpy(x, self_tab.row(b.nodes[k]), d * sizeof(double));
    if (b.has_nbrs[k]) {  // isolated nodes keep a zero neighborhood half
      double* mean = x + d;
      const std::uint32_t* nb = b.nbr_ids.data() + k * b.n_sample;
      for (std::size_t s = 0; s < b.n_sample; ++s) {
        const double* e = nbr_tab.row(nb[s]);
        for (std::size_t c = 0; c < d; ++c) mean[c] += e[c];
      }
      const double inv = 1.0 / static_cast<double>(b.n_sample);
      for (std::size_t c = 0; c < d; ++c) mean[c] *= inv;
    }
    double* h = b.out.row(k);
    for (std::size_t j = 0; j < d; ++j) {
      const double z = dot(w.row(j), x, 2 * d);
      h[j] = z > 0.0 ? z : 0.0;
    }
  });
}

}  // namespace

ForwardBatch forward_with_neighbors(const ModelState& m, Side side,
                                    std::span<const std::uint32_t> nodes,
                                    std::span<const std::uint32_t> nbr_ids, std::size_t n_sample) {
  if (m.layers == 1 && nbr_ids.size() != nodes.size() * n_sample)
    throw ConfigError("forward_with_neighbors: neighbor array shape mismatch");
  ForwardBatch b;
  b.side = side;
  b.dim = m.dim;
  b.n_sample = n_sample;
  b.layers = m.layers;
  b.nodes.assign(nodes.begin(), nodes.end());
  b.nbr_ids.assign(nbr_ids.begin(), nbr_ids.end());
  b.has_nbrs.assign(nodes.size(), 1);
  run_forward(m, b);
  return b;
}

ForwardBatch forward_embed(const ModelState& m, const BipartiteGraph& g, Side side,
                           std::span<const std::uint32_t> nodes, std::size_t n_sample,
                           const Rng& nbr_rng, bool isolated_fallback) {
  if (m.layers == 0) return forward_with_neighbors(m, side, nodes, {}, 0);
  if (n_sample == 0) throw ConfigError("forward_embed: n_sample must be >= 1 when layers=1");

  ForwardBatch b;
  b.side = side;
  b.dim = m.dim;
  b.n_sample = n_sample;
  b.layers = m.layers;
  b.nodes.assign(nodes.begin(), nodes.end());
  b.nbr_ids.assign(nodes.size() * n_sample, 0);
  b.has_nbrs.assign(nodes.size(), 1);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (g.degree(side, nodes[k]) == 0) {
      if (!isolated_fallback) throw DataError("isolated node " + std::to_string(nodes[k]));
      b.has_nbrs[k] = 0;
      continue;
    }
    Rng r = nbr_rng.fork(static_cast<std::uint64_t>(side), nodes[k]);
    g.sample_neighbors_into(side, nodes[k], n_sample, r, b.nbr_ids.data() + k * n_sample);
  }
  run_forward(m, b);
  return b;
}

FinalEmbeddings compute_final_embeddings(const ModelState& m, const BipartiteGraph& g,
                                         std::size_t n_sample, const Rng& nbr_rng, int block_id,
                                         int epoch) {
  FinalEmbeddings fe;
  fe.block_id = block_id;
  fe.epoch = epoch;
  fe.users = Matrix(m.n_users(), m.dim);
  fe.items = Matrix(m.n_items(), m.dim);
  constexpr std::size_t kChunk = 8192;
  for (Side side : {Side::User, Side::Item}) {
    Matrix& dst = side == Side::User ? fe.users : fe.items;
    const std::uint32_t n = side == Side::User ? m.n_users() : m.n_items();
    for (std::uint32_t start = 0; start < n; start += kChunk) {
      const std::uint32_t count = std::min<std::uint32_t>(kChunk, n - start);
      std::vector<std::uint32_t> nodes(count);
      for (std::uint32_t k = 0; k < count; ++k) nodes[k] = start + k;
      ForwardBatch b = forward_embed(m, g, side, nodes, n_sample, nbr_rng, true);
      for (std::uint32_t k = 0; k < count; ++k)
        std::memcpy(dst.row(start + k), b.out.row(k), m.dim * sizeof(double));
    }
  }
  return fe;
}

std::vector<double> score_pairs(const FinalEmbeddings& emb,
                                std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs) {
  std::vector<double> scores(pairs.size());
  const std::size_t d = emb.users.cols();
  for (std::size_t k = 0; k < pairs.size(); ++k)
    scores[k] = dot(emb.users.row(pairs[k].first), emb.items.row(pairs[k].second), d);
  return scores;
}

// --------------------------------------------------------------------------
// SparseRowGrads
// --------------------------------------------------------------------------

double* SparseRowGrads::acc(std::uint32_t row) {
  auto it = index_.find(row);
  if (it != index_.end()) return vals_[it->second].data();
  index_.emplace(row, rows_.size());
  rows_.push_back(row);
  vals_.emplace_back(dim_, 0.0);
  finalized_ = false;
  return vals_.back().data();
}

const double* SparseRowGrads::find(std::uint32_t row) const {
  auto it = index_.find(row);
  return it == index_.end() ? nullptr : vals_[it->second].data();
}

void SparseRowGrads::finalize() {
  if (finalized_) return;
  std::vector<std::size_t> order(rows_.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return rows_[a] < rows_[b]; });
  std::vector<std::uint32_t> rows(rows_.size());
  std::vector<std::vector<double>> vals(rows_.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    rows[k] = rows_[order[k]];
    vals[k] = std::move(vals_[order[k]]);
    index_[rows[k]] = k;
  }
  rows_ = std::move(rows);
  vals_ = std::move(vals);
  finalized_ = true;
}

bool SparseRowGrads::all_finite() const {
  for (const auto& v : vals_)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

// --------------------------------------------------------------------------
// Backward
// --------------------------------------------------------------------------

void backward(const ModelState& m, const ForwardBatch& batch, const Matrix& upstream,
              ModelGrads& grads) {
  const std::size_t d = m.dim;
  const std::size_t n = batch.nodes.size();
  if (upstream.rows() != n || upstream.cols() != d)
    throw ConfigError("backward: upstream gradient shape mismatch");

  SparseRowGrads& d_self = batch.side == Side::User ? grads.d_user : grads.d_item;
  SparseRowGrads& d_nbr = batch.side == Side::User ? grads.d_item : grads.d_user;

  if (m.layers == 0) {
    for (std::size_t k = 0; k < n; ++k) {
      double* g = d_self.acc(batch.nodes[k]);
      const double* up = upstream.row(k);
      for (std::size_t c = 0; c < d; ++c) g[c] += up[c];
    }
    return;
  }

  // dZ = upstream masked by ReLU activity (ReLU'(0) = 0, so out > 0 is the
  // exact mask).
  Matrix dz(n, d);
  parallel_for(n, [&](std::size_t k) {
    const double* up = upstream.row(k);
    const double* h = batch.out.row(k);
    double* z = dz.row(k);
    for (std::size_t j = 0; j < d; ++j) z[j] = h[j] > 0.0 ? up[j] : 0.0;
  });

  // dW[j,:] += sum_b dz[b,j] * x[b,:] — rows of dW are independent.
  Matrix& dw = batch.side == Side::User ? grads.dw_user : grads.dw_item;
  parallel_for(d, [&](std::size_t j) {
    double* wrow = dw.row(j);
    for (std::size_t b = 0; b < n; ++b) {
      const double c = dz.at(b, j);
      if (c == 0.0) continue;
      const double* x = batch.concat.row(b);
      for (std::size_t k = 0; k < 2 * d; ++k) wrow[k] += c * x[k];
    }
  });

  // dX = dZ W.
  const Matrix& w = m.weight(batch.side);
  Matrix dx(n, 2 * d);
  parallel_for(n, [&](std::size_t b) {
    double* out = dx.row(b);
    const double* z = dz.row(b);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = z[j];
      if (c == 0.0) continue;
      const double* wrow = w.row(j);
      for (std::size_t k = 0; k < 2 * d; ++k) out[k] += c * wrow[k];
    }
  });

  // Scatter: the self half accumulates into the node's own row, the
  // neighbor half spreads 1/n_sample to every sampled occurrence.
  struct Entry {
    std::uint32_t target;
    std::uint32_t src;
    float weight;  // 1.0 self, 1/n_sample per neighbor occurrence
    std::uint32_t half;
  };
  std::vector<Entry> self_entries, nbr_entries;
  self_entries.reserve(n);
  nbr_entries.reserve(n * batch.n_sample);
  const float inv = batch.n_sample ? 1.0f / static_cast<float>(batch.n_sample) : 0.0f;
  for (std::size_t b = 0; b < n; ++b) {
    self_entries.push_back({batch.nodes[b], static_cast<std::uint32_t>(b), 1.0f, 0});
    if (!batch.has_nbrs[b]) continue;
    const std::uint32_t* nb = batch.nbr_ids.data() + b * batch.n_sample;
    for (std::size_t s = 0; s < batch.n_sample; ++s)
      nbr_entries.push_back({nb[s], static_cast<std::uint32_t>(b), inv, 1});
  }

  auto scatter = [&](std::vector<Entry>& entries, SparseRowGrads& sink) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.target < b.target; });
    // Create accumulator rows serially, then fill groups in parallel.
    std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end)
    std::vector<double*> sinks;
    for (std::size_t i = 0; i < entries.size();) {
      std::size_t j = i;
      while (j < entries.size() && entries[j].target == entries[i].target) ++j;
      groups.emplace_back(i, j);
      sinks.push_back(sink.acc(entries[i].target));
      i = j;
    }
    parallel_for(groups.size(), [&](std::size_t gi) {
      double* out = sinks[gi];
      for (std::size_t e = groups[gi].first; e < groups[gi].second; ++e) {
        const Entry& en = entries[e];
        const double* src = dx.row(en.src) + (en.half ? d : 0);
        const double wgt = en.weight;
        for (std::size_t c = 0; c < d; ++c) out[c] += wgt * src[c];
      }
    });
  };
  scatter(self_entries, d_self);
  scatter(nbr_entries, d_nbr);
}

// --------------------------------------------------------------------------
// Checkpoints
// --------------------------------------------------------------------------

namespace {

void write_f32(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  std::string buf;
  buf.reserve(m.data().size() * 4);
  for (double v : m.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    buf.append(b, 4);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

Matrix read_f32(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != rows * cols * 4)
    throw DataError("'" + path.string() + "': expected " + std::to_string(rows * cols * 4) +
                    " bytes, got " + std::to_string(bytes.size()));
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < rows * cols; ++k) {
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * k);
    const std::uint32_t bits = static_cast<std::uint32_t>(u[0]) |
                               (static_cast<std::uint32_t>(u[1]) << 8) |
                               (static_cast<std::uint32_t>(u[2]) << 16) |
                               (static_cast<std::uint32_t>(u[3]) << 24);
    m.data()[k] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ModelState& m, std::uint64_t seed, int block_id,
                     const std::string& extra_json) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["schema"] = "graphsail-checkpoint";
  manifest["version"] = 1;
  manifest["dim"] = m.dim;
  manifest["layers"] = m.layers;
  manifest["n_users"] = m.n_users();
  manifest["n_items"] = m.n_items();
  manifest["seed"] = seed;
  manifest["block_id"] = block_id;
  if (!extra_json.empty()) manifest["config"] = json::parse(extra_json);
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("cannot write checkpoint manifest in '" + dir + "'");
  mf << manifest.dump(2) << "\n";

  write_f32(fs::path(dir) / "e_user.f32", m.e_user);
  write_f32(fs::path(dir) / "e_item.f32", m.e_item);
  if (m.layers == 1) {
    write_f32(fs::path(dir) / "w_user.f32", m.w_user);
    write_f32(fs::path(dir) / "w_item.f32", m.w_item);
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("cannot open checkpoint manifest in '" + dir + "'");
  json manifest = json::parse(mf);
  if (manifest.value("schema", "") != "graphsail-checkpoint")
    throw DataError("'" + dir + "' is not a checkpoint directory");

  Checkpoint ck;
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  ck.block_id = manifest.at("block_id").get<int>();
  if (manifest.contains("config")) ck.extra_json = manifest["config"].dump();
  ModelState& m = ck.model;
  m.dim = manifest.at("dim").get<std::size_t>();
  m.layers = manifest.at("layers").get<int>();
  const auto n_users = manifest.at("n_users").get<std::size_t>();
  const auto n_items = manifest.at("n_items").get<std::size_t>();
  m.e_user = read_f32(fs::path(dir) / "e_user.f32", n_users, m.dim);
  m.e_item = read_f32(fs::path(dir) / "e_item.f32", n_items, m.dim);
  if (m.layers == 1) {
    m.w_user = read_f32(fs::path(dir) / "w_user.f32", m.dim, 2 * m.dim);
    m.w_item = read_f32(fs::path(dir) / "w_item.f32", m.dim, 2 * m.dim);
  }
  return ck;
}

}  // namespace graphsail
