#include "terralabel/matching/similarity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/common/parallel.hpp"

namespace terralabel::matching {

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    dot += double(a[d]) * b[d];
    na += double(a[d]) * a[d];
    nb += double(b[d]) * b[d];
  }
  if (na == 0 || nb == 0) return 0.0;
  // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b it is exactly dot.
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double chip_similarity(const SegmentEmbedding& a, const SegmentEmbedding& b, Assignment& assignment) {
  if (a.dim != b.dim) {
    throw InvalidArgument("chip_similarity: embedding widths differ (" + std::to_string(a.dim) + " vs " +
                          std::to_string(b.dim) + ")");
  }
  if (a.nodes == 0 || b.nodes == 0) throw InvalidArgument("chip_similarity: empty embedding");
  std::vector<double> cos(a.nodes * b.nodes);
  for (std::size_t i = 0; i < a.nodes; ++i)
    for (std::size_t j = 0; j < b.nodes; ++j) cos[i * b.nodes + j] = cosine(a.row(i), b.row(j));

  auto zero_rows = [](const SegmentEmbedding& e) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < e.nodes; ++i) {
      const auto r = e.row(i);
      n += std::all_of(r.begin(), r.end(), [](float v) { return v == 0.0f; });
    }
    return n;
  };
  if (const std::size_t z = zero_rows(a) + zero_rows(b)) {
    log::warn("chip_similarity " + a.chip_id + "/" + b.chip_id + ": " + std::to_string(z) +
              " zero-norm segment rows scored as similarity 0");
  }

  std::vector<double> cost(cos.size());
  std::transform(cos.begin(), cos.end(), cost.begin(), [](double c) { return 1.0 - c; });
  assignment = hungarian(cost, a.nodes, b.nodes);
  double sum = 0;
  for (const auto& [i, j] : assignment.pairs) sum += cos[i * b.nodes + j];
  return sum / double(assignment.pairs.size());
}

double chip_similarity(const SegmentEmbedding& a, const SegmentEmbedding& b) {
  Assignment unused;
  return chip_similarity(a, b, unused);
}

SimilarityMatrix similarity_matrix(std::span<const SegmentEmbedding> embeddings, std::size_t* pairs_computed) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw InvalidArgument("similarity_matrix: need at least two chips");
  SimilarityMatrix sim;
  for (const auto& e : embeddings) sim.ids.push_back(e.chip_id);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      // Canonical direction matters only when segment counts differ.
      pairs.push_back(embeddings[i].chip_id <= embeddings[j].chip_id ? std::pair{i, j} : std::pair{j, i});
    }
  std::vector<double> result(pairs.size());
  std::atomic<std::size_t> work{0};
  parallel_for(pairs.size(), [&](std::size_t p) {
    result[p] = chip_similarity(embeddings[pairs[p].first], embeddings[pairs[p].second]);
    ++work;
  });

  sim.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) sim.values[i * n + i] = 1.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    sim.values[i * n + j] = sim.values[j * n + i] = result[p];
  }
  if (pairs_computed) *pairs_computed = work.load();
  return sim;
}

void save_similarity(const std::filesystem::path& path, const SimilarityMatrix& sim) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t n = sim.size();
  io::write_magic(out, "SIMM");
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  for (const auto& id : sim.ids) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  std::vector<float> upper;
  upper.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) upper.push_back(static_cast<float>(sim.at(i, j)));
  io::write_span<float>(out, upper);
  if (!out) throw Error("write failed: " + path.string());
}

SimilarityMatrix load_similarity(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open similarity matrix " + path.string());
  io::expect_magic(in, "SIMM");
  const std::size_t n = io::read_pod<std::uint32_t>(in);
  SimilarityMatrix sim;
  for (std::size_t i = 0; i < n; ++i) {
    std::string id(io::read_pod<std::uint32_t>(in), '\0');
    in.read(id.data(), static_cast<std::streamsize>(id.size()));
    if (!in) throw FormatError("truncated chip id table in " + path.string());
    sim.ids.push_back(std::move(id));
  }
  std::vector<float> upper(n * (n + 1) / 2);
  io::read_into<float>(in, upper);
  sim.values.assign(n * n, 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) sim.values[i * n + j] = sim.values[j * n + i] = upper[k++];
  return sim;
}

}  // namespace terralabel::matching
