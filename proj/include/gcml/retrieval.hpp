// Exhaustive Euclidean search over unit-norm embeddings, Recall@n and the
// rotated-query protocol.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcml/data.hpp"
#include "gcml/model.hpp"

namespace gcml {

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmbeddingIndex {
  std::size_t dim = 0;
  std::vector<float> rows;  // size() x dim, row-major, unit norm or zero
  std::vector<long> ids;
  std::vector<int> labels;

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
  int label_of(long id) const;
};

/// `embeddings` is M x D; rows are L2-normalized on insertion.
EmbeddingIndex build_index(const Tensor<float>& embeddings, std::span<const long> ids,
                           std::span<const int> labels);

struct RetrievalResult {
  long query_id = -1;
  std::vector<long> ranked_ids;
  std::vector<double> distances;  // squared Euclidean, ascending
};

/// Top-n by squared Euclidean distance (accumulated in double), ties broken
/// by ascending id; n larger than the index returns every row.
RetrievalResult query(const EmbeddingIndex& index, std::span<const float> embedding, std::size_t n,
                      long query_id = -1);

/// Percent of queries with a same-label item among their first n results,
/// one value per entry of n_values. Every query needs a positive in the index.
std::vector<double> recall_at_n(const EmbeddingIndex& index, const std::vector<RetrievalResult>& results,
                                std::span<const int> query_labels, std::span<const int> n_values);

struct RecallTable {
  std::string method;
  std::vector<int> n_values;
  std::vector<double> recall;
};

/// Rows "method<TAB>n<TAB>recall_percent" under a header line.
void write_recall_tsv(std::ostream& out, const std::vector<RecallTable>& tables);
std::vector<RecallTable> read_recall_tsv(std::istream& in);

/// Eval-mode, gradient-free embeddings of every sample: N x D.
Tensor<float> embed_dataset(Model<float>& model, const Dataset& data, int batch_size = 64,
                            std::span<const int> turns = {});

struct ProtocolResult {
  RecallTable unrotated;
  RecallTable rotated;
  std::vector<int> turns;  // quarter turns applied to each query
};

/// Database embedded unrotated; each query rotated by turns[i] quarter turns.
/// Database and queries share identity labels through (class_id, instance_id).
ProtocolResult rotated_protocol(Model<float>& model, const Dataset& database, const Dataset& queries,
                                std::span<const int> turns, std::span<const int> n_values,
                                const std::string& method);
/// Turns drawn from Prng(seed).below(4), one per query in order.
ProtocolResult rotated_protocol(Model<float>& model, const Dataset& database, const Dataset& queries,
                                std::uint64_t seed, std::span<const int> n_values,
                                const std::string& method);

std::vector<int> draw_turns(std::size_t count, std::uint64_t seed);

}  // namespace gcml
