#include "seqplace/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "binary_io.hpp"
#include "json.hpp"

namespace seqplace {

DescriptorIndex DescriptorIndex::build(const std::vector<std::pair<uint64_t, Descriptor>>& rows) {
  if (rows.empty()) throw ConfigError("cannot build an empty descriptor index");
  DescriptorIndex index;
  index.dim_ = rows.front().second.size();
  if (index.dim_ == 0) throw ConfigError("descriptor dimension must be positive");
  index.ids_.reserve(rows.size());
  index.data_.reserve(rows.size() * index.dim_);
  std::unordered_set<uint64_t> seen;
  seen.reserve(rows.size());
  for (const auto& [id, desc] : rows) {
    if (desc.size() != index.dim_) {
      throw ConfigError("descriptor for id " + std::to_string(id) + " has dimension " +
                        std::to_string(desc.size()) + ", expected " + std::to_string(index.dim_));
    }
    if (!seen.insert(id).second) {
      throw ConfigError("duplicate id " + std::to_string(id) + " in descriptor index");
    }
    index.ids_.push_back(id);
    index.data_.insert(index.data_.end(), desc.begin(), desc.end());
  }
  return index;
}

void save_index(const std::string& path, const DescriptorIndex& index) {
  io::Writer w(path);
  w.magic("SQIX");
  w.pod<uint8_t>(1);
  w.pod<uint32_t>(static_cast<uint32_t>(index.size()));
  w.pod<uint32_t>(static_cast<uint32_t>(index.dim()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.pod<uint64_t>(index.id(i));
    const auto row = index.row(i);
    w.bytes(row.data(), row.size() * sizeof(float));
  }
  w.finish();
}

DescriptorIndex load_index(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("SQIX", "descriptor index");
  r.expect_version(1, "descriptor index");
  const auto count = r.pod<uint32_t>();
  const auto dim = r.pod<uint32_t>();
  std::vector<std::pair<uint64_t, Descriptor>> rows;
  rows.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const auto id = r.pod<uint64_t>();
    Descriptor d(dim);
    r.bytes(d.data(), dim * sizeof(float));
    rows.emplace_back(id, std::move(d));
  }
  if (!r.at_eof()) {
    throw DataError(path + ": trailing bytes after " + std::to_string(count) + " rows");
  }
  return DescriptorIndex::build(rows);
}

std::vector<Match> query_top_k(const DescriptorIndex& index, std::span<const float> query,
                               std::size_t k) {
  if (k == 0) throw ConfigError("query_top_k: k must be at least 1");
  if (query.size() != index.dim()) {
    throw ConfigError("query dimension " + std::to_string(query.size()) + " does not match index (" +
                      std::to_string(index.dim()) + ")");
  }
  std::vector<Match> all(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.row(i);
    double acc = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) {
      const double diff = static_cast<double>(query[d]) - static_cast<double>(row[d]);
      acc += diff * diff;
    }
    all[i] = {index.id(i), static_cast<float>(acc)};
  }
  const std::size_t take = std::min(k, all.size());
  const auto before = [](const Match& a, const Match& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  };
  std::partial_sort(all.begin(), all.begin() + take, all.end(), before);
  all.resize(take);
  return all;
}

namespace {

// per-query facts the metrics are computed from
struct QueryOutcome {
  std::vector<Match> top;    // top-20 (or fewer)
  bool has_truth = false;    // any index entry overlaps above threshold
  std::size_t correct_upto = 0;  // smallest n with a true match in top-n, 0 = none
};

std::vector<QueryOutcome> run_queries(const QuerySet& queries, const DescriptorIndex& index,
                                      const OverlapTable& truth, std::size_t k, int workers) {
  if (queries.empty()) throw ConfigError("empty query set");
  for (const auto& [qid, desc] : queries) {
    if (qid >= truth.n) {
      throw DataError("query id " + std::to_string(qid) + " is outside the overlap table (n=" +
                      std::to_string(truth.n) + ")");
    }
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.id(i) >= truth.n) {
      throw DataError("index id " + std::to_string(index.id(i)) +
                      " is outside the overlap table (n=" + std::to_string(truth.n) + ")");
    }
  }
  std::vector<QueryOutcome> out(queries.size());
  parallel_for(queries.size(), workers, [&](std::size_t qi) {
    const auto& [qid, desc] = queries[qi];
    QueryOutcome& o = out[qi];
    o.top = query_top_k(index, desc, k);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (truth.at(qid, index.id(i)) > truth.pos_threshold) {
        o.has_truth = true;
        break;
      }
    }
    for (std::size_t r = 0; r < o.top.size(); ++r) {
      if (truth.at(qid, o.top[r].id) > truth.pos_threshold) {
        o.correct_upto = r + 1;
        break;
      }
    }
  });
  return out;
}

double recall_from(const std::vector<QueryOutcome>& outcomes, std::size_t n, std::size_t evaluated) {
  if (evaluated == 0) return 0.0;
  std::size_t hits = 0;
  for (const QueryOutcome& o : outcomes) {
    if (o.has_truth && o.correct_upto != 0 && o.correct_upto <= n) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(evaluated);
}

std::vector<PrPoint> pr_from(const std::vector<QueryOutcome>& outcomes,
                             const std::vector<float>& thresholds) {
  std::size_t with_truth = 0;
  for (const QueryOutcome& o : outcomes) {
    if (o.has_truth) ++with_truth;
  }
  std::vector<PrPoint> curve;
  curve.reserve(thresholds.size());
  for (float t : thresholds) {
    std::size_t predicted = 0, tp = 0;
    for (const QueryOutcome& o : outcomes) {
      if (o.top.empty() || o.top.front().distance > t) continue;
      ++predicted;
      if (o.correct_upto == 1) ++tp;
    }
    PrPoint point;
    point.threshold = t;
    point.precision = predicted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    point.recall = with_truth == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(with_truth);
    curve.push_back(point);
  }
  return curve;
}

}  // namespace

RecallResult average_recall_at_n(const QuerySet& queries, const DescriptorIndex& index,
                                 const OverlapTable& truth, std::size_t n, int workers) {
  if (n == 0) throw ConfigError("average_recall_at_n: n must be at least 1");
  const auto outcomes = run_queries(queries, index, truth, n, workers);
  RecallResult r;
  for (const QueryOutcome& o : outcomes) {
    if (o.has_truth) {
      ++r.evaluated;
    } else {
      ++r.excluded;
    }
  }
  r.value = recall_from(outcomes, n, r.evaluated);
  return r;
}

std::vector<PrPoint> precision_recall_curve(const QuerySet& queries, const DescriptorIndex& index,
                                            const OverlapTable& truth,
                                            const std::vector<float>& thresholds, int workers) {
  const auto outcomes = run_queries(queries, index, truth, 1, workers);
  return pr_from(outcomes, thresholds);
}

std::vector<float> threshold_sweep(const std::vector<float>& top1_distances, std::size_t count) {
  if (count < 2) count = 2;
  float hi = 0.0f;
  for (float d : top1_distances) hi = std::max(hi, d);
  std::vector<float> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(hi * static_cast<float>(i) / static_cast<float>(count - 1));
  }
  return out;
}

double f1_max(const std::vector<PrPoint>& curve) {
  double best = 0.0;
  for (const PrPoint& p : curve) {
    const double denom = p.precision + p.recall;
    if (denom > 0.0) best = std::max(best, 2.0 * p.precision * p.recall / denom);
  }
  return best;
}

EvalReport evaluate(const QuerySet& queries, const DescriptorIndex& index,
                    const OverlapTable& truth, std::size_t pr_points, int workers) {
  const auto outcomes = run_queries(queries, index, truth, 20, workers);
  EvalReport report;
  for (const QueryOutcome& o : outcomes) {
    if (o.has_truth) {
      ++report.evaluated;
    } else {
      ++report.excluded;
    }
  }
  report.ar1 = recall_from(outcomes, 1, report.evaluated);
  report.ar5 = recall_from(outcomes, 5, report.evaluated);
  report.ar20 = recall_from(outcomes, 20, report.evaluated);
  std::vector<float> top1;
  top1.reserve(outcomes.size());
  for (const QueryOutcome& o : outcomes) {
    if (!o.top.empty()) top1.push_back(o.top.front().distance);
  }
  report.pr = pr_from(outcomes, threshold_sweep(top1, pr_points));
  report.f1 = f1_max(report.pr);
  report.top_lists.reserve(outcomes.size());
  for (const QueryOutcome& o : outcomes) report.top_lists.push_back(o.top);
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["ar1"] = report.ar1;
  j["ar5"] = report.ar5;
  j["ar20"] = report.ar20;
  j["excluded_queries"] = report.excluded;
  auto pr = nlohmann::ordered_json::array();
  for (const PrPoint& p : report.pr) {
    pr.push_back({p.threshold, p.precision, p.recall});
  }
  j["pr"] = pr;
  j["f1_max"] = report.f1;
  return j.dump(2) + "\n";
}

}  // namespace seqplace
