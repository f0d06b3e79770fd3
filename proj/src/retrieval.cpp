#include "gcml/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "gcml/training.hpp"

namespace gcml {

int EmbeddingIndex::label_of(long id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return labels[i];
  throw RetrievalError("index: unknown id " + std::to_string(id));
}

EmbeddingIndex build_index(const Tensor<float>& embeddings, std::span<const long> ids,
                           std::span<const int> labels) {
  EmbeddingIndex index;
  if (ids.size() != labels.size()) throw RetrievalError("build_index: ids and labels differ in length");
  if (ids.empty()) {
    if (embeddings.numel() != 0 && embeddings.ndim() == 2) index.dim = embeddings.dim(1);
    return index;
  }
  if (embeddings.ndim() != 2 || embeddings.dim(0) != ids.size())
    throw RetrievalError("build_index: embeddings must be M x D with one row per id");
  std::set<long> seen;
  for (long id : ids)
    if (!seen.insert(id).second) throw RetrievalError("build_index: duplicate id " + std::to_string(id));
  index.dim = embeddings.dim(1);
  index.rows = embeddings.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    float* row = index.rows.data() + r * index.dim;
    double norm = 0;
    for (std::size_t j = 0; j < index.dim; ++j) norm += static_cast<double>(row[j]) * row[j];
    norm = std::sqrt(norm);
    if (norm > 0)
      for (std::size_t j = 0; j < index.dim; ++j) row[j] = static_cast<float>(row[j] / norm);
  }
  index.ids.assign(ids.begin(), ids.end());
  index.labels.assign(labels.begin(), labels.end());
  return index;
}

RetrievalResult query(const EmbeddingIndex& index, std::span<const float> embedding, std::size_t n,
                      long query_id) {
  if (index.size() == 0) throw RetrievalError("query: empty index");
  if (n == 0) throw RetrievalError("query: n must be >= 1");
  if (embedding.size() != index.dim) throw RetrievalError("query: embedding dimension mismatch");
  std::vector<std::pair<double, long>> scored(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto row = index.row(r);
    double d = 0;
    for (std::size_t j = 0; j < index.dim; ++j) {
      const double diff = static_cast<double>(row[j]) - static_cast<double>(embedding[j]);
      d += diff * diff;
    }
    scored[r] = {d, index.ids[r]};
  }
  const std::size_t keep = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(keep), scored.end());
  RetrievalResult result;
  result.query_id = query_id;
  for (std::size_t i = 0; i < keep; ++i) {
    result.distances.push_back(scored[i].first);
    result.ranked_ids.push_back(scored[i].second);
  }
  return result;
}

std::vector<double> recall_at_n(const EmbeddingIndex& index, const std::vector<RetrievalResult>& results,
                                std::span<const int> query_labels, std::span<const int> n_values) {
  if (results.size() != query_labels.size())
    throw RetrievalError("recall_at_n: one label per query result required");
  if (results.empty()) throw RetrievalError("recall_at_n: no queries");
  std::map<long, int> label_by_id;
  std::set<int> present;
  for (std::size_t i = 0; i < index.size(); ++i) {
    label_by_id[index.ids[i]] = index.labels[i];
    present.insert(index.labels[i]);
  }
  for (int n : n_values)
    if (n < 1) throw RetrievalError("recall_at_n: n must be >= 1");

  std::vector<double> hits(n_values.size(), 0.0);
  for (std::size_t q = 0; q < results.size(); ++q) {
    if (!present.count(query_labels[q]))
      throw RetrievalError("recall_at_n: query " + std::to_string(q) + " has no positive in the database");
    // Rank of the first positive, or past the end.
    std::size_t first = results[q].ranked_ids.size();
    for (std::size_t r = 0; r < results[q].ranked_ids.size(); ++r) {
      auto it = label_by_id.find(results[q].ranked_ids[r]);
      if (it == label_by_id.end()) throw RetrievalError("recall_at_n: result id not in the index");
      if (it->second == query_labels[q]) {
        first = r;
        break;
      }
    }
    for (std::size_t k = 0; k < n_values.size(); ++k)
      if (first < static_cast<std::size_t>(n_values[k])) hits[k] += 1;
  }
  for (auto& h : hits) h = 100.0 * h / static_cast<double>(results.size());
  return hits;
}

void write_recall_tsv(std::ostream& out, const std::vector<RecallTable>& tables) {
  out << "method\tn\trecall_percent\n";
  char buf[32];
  for (const auto& t : tables) {
    for (std::size_t i = 0; i < t.n_values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.4f", t.recall[i]);
      out << t.method << '\t' << t.n_values[i] << '\t' << buf << '\n';
    }
  }
}

std::vector<RecallTable> read_recall_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "method\tn\trecall_percent")
    throw RetrievalError("recall table: bad header");
  std::vector<RecallTable> tables;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string method, n, recall;
    if (!std::getline(ss, method, '\t') || !std::getline(ss, n, '\t') || !std::getline(ss, recall))
      throw RetrievalError("recall table: malformed row '" + line + "'");
    if (tables.empty() || tables.back().method != method) tables.push_back({method, {}, {}});
    tables.back().n_values.push_back(std::stoi(n));
    tables.back().recall.push_back(std::stod(recall));
  }
  return tables;
}

Tensor<float> embed_dataset(Model<float>& model, const Dataset& data, int batch_size,
                            std::span<const int> turns) {
  if (data.empty()) throw RetrievalError("embed_dataset: empty dataset");
  if (!turns.empty() && turns.size() != data.size())
    throw RetrievalError("embed_dataset: one rotation per sample required");
  if (batch_size < 1) batch_size = 1;
  NoGradGuard guard;
  const Mode previous = model.mode();
  model.set_mode(Mode::eval);
  std::vector<float> values;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    auto images = stack_images(data, idx);
    if (!turns.empty()) images = rotate_batch(images, turns.subspan(start, end - start));
    const auto emb = model.forward_embed(images);
    dim = emb.dim(1);
    values.insert(values.end(), emb.values().begin(), emb.values().end());
  }
  model.set_mode(previous);
  return Tensor<float>({data.size(), dim}, std::move(values));
}

std::vector<int> draw_turns(std::size_t count, std::uint64_t seed) {
  Prng rng(seed);
  std::vector<int> turns(count);
  for (auto& t : turns) t = static_cast<int>(rng.below(4));
  return turns;
}

namespace {

RecallTable run_queries(const EmbeddingIndex& index, const Tensor<float>& query_emb,
                        std::span<const int> query_labels, std::span<const int> n_values,
                        const std::string& method) {
  const int n_max = *std::max_element(n_values.begin(), n_values.end());
  std::vector<RetrievalResult> results;
  const std::size_t dim = query_emb.dim(1);
  for (std::size_t q = 0; q < query_emb.dim(0); ++q) {
    std::span<const float> row(query_emb.values().data() + q * dim, dim);
    results.push_back(query(index, row, static_cast<std::size_t>(n_max), static_cast<long>(q)));
  }
  return {method, std::vector<int>(n_values.begin(), n_values.end()),
          recall_at_n(index, results, query_labels, n_values)};
}

}  // namespace

ProtocolResult rotated_protocol(Model<float>& model, const Dataset& database, const Dataset& queries,
                                std::span<const int> turns, std::span<const int> n_values,
                                const std::string& method) {
  if (database.empty()) throw RetrievalError("rotated_protocol: empty database");
  if (queries.empty()) throw RetrievalError("rotated_protocol: empty query set");
  if (n_values.empty()) throw RetrievalError("rotated_protocol: no n values");
  if (turns.size() != queries.size()) throw RetrievalError("rotated_protocol: one rotation per query required");

  std::map<std::pair<int, int>, int> identity;
  auto label_of = [&](const Sample& s) {
    auto key = std::make_pair(s.meta.class_id, s.meta.instance_id);
    return identity.emplace(key, static_cast<int>(identity.size())).first->second;
  };
  std::vector<int> db_labels, query_labels;
  std::vector<long> db_ids;
  for (std::size_t i = 0; i < database.size(); ++i) {
    db_labels.push_back(label_of(database[i]));
    db_ids.push_back(static_cast<long>(i));
  }
  for (const auto& s : queries) query_labels.push_back(label_of(s));

  const auto index = build_index(embed_dataset(model, database), db_ids, db_labels);
  ProtocolResult out;
  out.turns.assign(turns.begin(), turns.end());
  out.unrotated = run_queries(index, embed_dataset(model, queries), query_labels, n_values, method);
  out.rotated = run_queries(index, embed_dataset(model, queries, 64, turns), query_labels, n_values, method);
  return out;
}

ProtocolResult rotated_protocol(Model<float>& model, const Dataset& database, const Dataset& queries,
                                std::uint64_t seed, std::span<const int> n_values, const std::string& method) {
  const auto turns = draw_turns(queries.size(), seed);
  return rotated_protocol(model, database, queries, turns, n_values, method);
}

}  // namespace gcml
