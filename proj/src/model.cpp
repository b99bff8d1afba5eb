#include "dgenn/model.hpp"

#include <chrono>
#include <fstream>
#include <limits>
#include <numeric>

#include "dgenn/binary_io.hpp"
#include "dgenn/metrics.hpp"

namespace dgenn {

namespace {

constexpr std::string_view kCheckpointMagic = "DGCK";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::string_view kEmbeddingMagic = "DGEM";

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::size_t field_plan_count(const GraphSet& graphs) {
  return graphs.user_fields.size() + graphs.item_fields.size();
}

}  // namespace

SlotLayout SlotLayout::from(const FeatureVocabulary& vocab, bool behaviors) {
  SlotLayout l;
  l.user_attr_fields = vocab.fields_with_role(FieldRole::UserAttr);
  l.item_attr_fields = vocab.fields_with_role(FieldRole::ItemAttr);
  l.behaviors = behaviors;
  l.context_fields = vocab.fields_with_role(FieldRole::Context);
  return l;
}

EncodedBatch EncodedBatch::subset(std::span<const std::size_t> rows) const {
  EncodedBatch out;
  out.fields = fields;
  out.labels.reserve(rows.size());
  out.offsets.reserve(rows.size() * fields + 1);
  for (auto r : rows) {
    for (std::size_t s = 0; s < fields; ++s) {
      const auto ids = slot(r, s);
      out.ids.insert(out.ids.end(), ids.begin(), ids.end());
      out.offsets.push_back(out.ids.size());
    }
    out.labels.push_back(labels[r]);
  }
  return out;
}

EncodedBatch encode(const SlotLayout& layout, const FeatureVocabulary& vocab,
                    std::span<const Instance> instances) {
  // vocabulary field -> slot
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> slot_of(vocab.num_fields(), kNone);
  std::size_t next = 2;
  for (auto f : layout.user_attr_fields) slot_of[f] = next++;
  for (auto f : layout.item_attr_fields) slot_of[f] = next++;
  const std::size_t behavior_slot = layout.behaviors ? next++ : kNone;
  for (auto f : layout.context_fields) slot_of[f] = next++;

  EncodedBatch b;
  b.fields = layout.count();
  std::vector<std::vector<FeatureId>> slots(b.fields);
  for (const auto& inst : instances) {
    for (auto& s : slots) s.clear();
    slots[0].push_back(inst.user);
    slots[1].push_back(inst.item);
    for (const auto* group : {&inst.user_attrs, &inst.item_attrs, &inst.context})
      for (auto id : *group) {
        const auto s = slot_of.at(vocab.field_of(id));
        if (s == kNone) throw DataError("encode: feature " + std::to_string(id) + " has no slot");
        slots[s].push_back(id);
      }
    if (behavior_slot != kNone) slots[behavior_slot] = inst.behaviors;
    for (const auto& s : slots) {
      b.ids.insert(b.ids.end(), s.begin(), s.end());
      b.offsets.push_back(b.ids.size());
    }
    b.labels.push_back(inst.label);
  }
  return b;
}

bool ModelState::operator==(const ModelState& o) const {
  return config.to_json() == o.config.to_json() && seed == o.seed && epoch == o.epoch &&
         params == o.params && adam.step == o.adam.step && adam.m == o.adam.m && adam.v == o.adam.v;
}

nlohmann::json EpochLog::to_json(bool with_wall_time) const {
  nlohmann::json j{{"epoch", epoch}, {"train_logloss", train_logloss}, {"val_auc", val_auc},
                   {"val_logloss", val_logloss}};
  if (with_wall_time) j["wall_time"] = wall_time;
  return j;
}

std::uint64_t config_hash(const ModelConfig& config) { return io::fnv1a(config.to_json().dump()); }

ModelState initial_state(const ModelConfig& config, const Dataset& dataset, const GraphSet& graphs,
                         std::uint64_t seed) {
  config.validate();
  ModelState s;
  s.config = config;
  s.seed = seed;
  std::mt19937_64 rng(seed);
  const auto layout = SlotLayout::from(dataset.vocabulary);
  s.params = init_params<TrainScalar>(config, dataset.vocabulary.total(), field_plan_count(graphs),
                                      layout.count(), rng);
  s.adam = Adam<TrainScalar>::make(s.params, config.lr);
  return s;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  io::write_magic(out, kCheckpointMagic);
  io::write_pod(out, kCheckpointVersion);
  io::write_pod(out, config_hash(state.config));
  io::write_string(out, state.config.to_json().dump());
  io::write_pod(out, state.seed);
  io::write_pod(out, state.epoch);
  io::write_pod(out, state.adam.step);
  // Shape skeleton: table rows, attribute plans, MLP input width.
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(state.params.embeddings.rows()));
  io::write_pod<std::uint64_t>(out, state.params.fields.size());
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(state.params.mlp.w.front().cols()));
  for (const auto* p : {&state.params, &state.adam.m, &state.adam.v}) {
    const auto tensors = p->tensors();
    io::write_pod<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
      io::write_string(out, t.name);
      io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.size));
      io::write_span<TrainScalar>(out, {t.data, static_cast<std::size_t>(t.size)});
    }
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("checkpoint not found: " + path.string());
  io::expect_magic(in, kCheckpointMagic, path.string());
  if (io::read_pod<std::uint32_t>(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  const auto hash = io::read_pod<std::uint64_t>(in);
  ModelState s;
  s.config = ModelConfig::from_json(nlohmann::json::parse(io::read_string(in)));
  if (config_hash(s.config) != hash) throw DataError("checkpoint config hash mismatch");
  s.seed = io::read_pod<std::uint64_t>(in);
  s.epoch = io::read_pod<std::uint64_t>(in);
  const auto step = io::read_pod<std::uint64_t>(in);
  const auto rows = io::read_pod<std::uint64_t>(in);
  const auto plans = io::read_pod<std::uint64_t>(in);
  const auto input = io::read_pod<std::uint64_t>(in);

  // Rebuild shapes, then overwrite every value.
  const auto d = static_cast<Index>(s.config.embedding_dim);
  Index slots = 2;
  while (representation_width(slots, d) < static_cast<Index>(input)) ++slots;
  if (representation_width(slots, d) != static_cast<Index>(input)) throw DataError("checkpoint: bad MLP width");
  std::mt19937_64 rng(0);
  s.params = init_params<TrainScalar>(s.config, static_cast<Index>(rows), plans, static_cast<std::size_t>(slots), rng);
  s.adam = Adam<TrainScalar>::make(s.params, s.config.lr);
  s.adam.step = step;
  for (auto* p : {&s.params, &s.adam.m, &s.adam.v}) {
    auto tensors = p->tensors();
    if (io::read_pod<std::uint64_t>(in) != tensors.size()) throw DataError("checkpoint: tensor count mismatch");
    for (auto& t : tensors) {
      if (io::read_string(in) != t.name) throw DataError("checkpoint: unexpected tensor order");
      if (io::read_pod<std::uint64_t>(in) != static_cast<std::uint64_t>(t.size))
        throw DataError("checkpoint: shape mismatch in " + t.name);
      io::read_into<TrainScalar>(in, {t.data, static_cast<std::size_t>(t.size)});
    }
  }
  return s;
}

TrainResult train(const ModelConfig& config, const Dataset& dataset, const GraphSet& graphs,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.state = initial_state(config, dataset, graphs, seed);
  if (config.epochs == 0) return result;

  auto net = make_network<TrainScalar>(config, dataset.vocabulary, graphs);
  const EncodedBatch train_all = encode(net.layout, dataset.vocabulary, dataset.train);
  const EncodedBatch val_all = encode(net.layout, dataset.vocabulary, dataset.val);
  if (train_all.size() == 0) throw DataError("train: no training instances");
  const bool sampled = config.fanout > 0 && graphs.cf.edge_count() > config.sampling_edge_threshold;

  ModelState state = result.state;
  ModelParams<TrainScalar> grad;
  std::vector<std::size_t> order(train_all.size());
  double best_auc = -std::numeric_limits<double>::infinity();
  std::uint32_t stale = 0;
  for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (sampled)
      net.graphs.set_collab(sample_graph(graphs.cf, config.fanout, seed, epoch),
                            dataset.vocabulary.num_users(), config);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix(seed ^ mix(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      const EncodedBatch batch = train_all.subset({order.data() + b, e - b});
      const double reg = net.penalty(state.params);
      const double loss =
          net.gradient(state.params, batch, grad, true, mix(seed + state.adam.step + 1));
      if (!std::isfinite(loss) || loss > 100.0)
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(state.adam.step + 1) + ": loss=" + std::to_string(loss));
      state.adam.update(state.params, grad);
      for (const auto& t : state.params.tensors())
        for (Index i = 0; i < t.size; ++i)
          if (!std::isfinite(t.data[i]))
            throw NumericError("non-finite parameter " + t.name + " after step " + std::to_string(state.adam.step));
      total += (loss - reg) * static_cast<double>(e - b);
    }
    state.epoch = epoch;
    if (sampled) net.graphs.set_collab(graphs.cf, dataset.vocabulary.num_users(), config);

    EpochLog log;
    log.epoch = epoch;
    log.train_logloss = total / static_cast<double>(order.size());
    if (val_all.size() > 0) {
      const Vector<TrainScalar> p = net.predict(state.params, val_all);
      const std::vector<double> scores(p.data(), p.data() + p.size());
      log.val_auc = metrics::auc(scores, val_all.labels);
      log.val_logloss = metrics::logloss(scores, val_all.labels);
    }
    log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.val_auc > best_auc) {
      best_auc = log.val_auc;
      result.state = state;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

std::vector<double> predict(const ModelState& state, const Dataset& dataset, const GraphSet& graphs,
                            std::span<const Instance> instances) {
  const auto net = make_network<TrainScalar>(state.config, dataset.vocabulary, graphs);
  const Vector<TrainScalar> p = net.predict(state.params, encode(net.layout, dataset.vocabulary, instances));
  return {p.data(), p.data() + p.size()};
}

Matrix<TrainScalar> enhanced_embeddings(const ModelState& state, const Dataset& dataset,
                                        const GraphSet& graphs) {
  const auto net = make_network<TrainScalar>(state.config, dataset.vocabulary, graphs);
  return net.enhanced_table(state.params, nullptr);
}

Scorer::Scorer(Matrix<TrainScalar> table, Mlp<TrainScalar> mlp, SlotLayout layout, FeatureVocabulary vocab)
    : table_(std::move(table)), mlp_(std::move(mlp)), layout_(std::move(layout)), vocab_(std::move(vocab)) {}

double Scorer::score(const Instance& instance) {
  const Instance one[] = {instance};
  const EncodedBatch b = encode(layout_, vocab_, one);
  const Index d = table_.cols();
  std::vector<Vector<TrainScalar>> fields;
  fields.reserve(b.fields);
  for (std::size_t s = 0; s < b.fields; ++s) {
    std::vector<Vector<TrainScalar>> members;
    for (auto id : b.slot(0, s)) members.push_back(table_.row(id).transpose());
    ops_ += members.size() * static_cast<std::uint64_t>(d);
    fields.push_back(pool_multivalued<TrainScalar>(members, d));
  }
  const auto f = static_cast<std::uint64_t>(fields.size());
  ops_ += f * (f - 1) / 2 * static_cast<std::uint64_t>(d);
  for (const auto& w : mlp_.w) ops_ += static_cast<std::uint64_t>(w.size());
  return mlp_forward<TrainScalar>(inner_product_layer<TrainScalar>(fields), mlp_);
}

void write_embeddings(const Matrix<TrainScalar>& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  io::write_magic(out, kEmbeddingMagic);
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(table.rows()));
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(table.cols()));
  io::write_span<TrainScalar>(out, {table.data(), static_cast<std::size_t>(table.size())});
  if (!out) throw Error("failed writing embeddings " + path.string());
}

Matrix<TrainScalar> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("embeddings not found: " + path.string());
  io::expect_magic(in, kEmbeddingMagic, path.string());
  const auto rows = io::read_pod<std::uint64_t>(in);
  const auto cols = io::read_pod<std::uint64_t>(in);
  Matrix<TrainScalar> m(static_cast<Index>(rows), static_cast<Index>(cols));
  io::read_into<TrainScalar>(in, {m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

}  // namespace dgenn
