#pragma once

#include <cstdint>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcps/classes.hpp"
#include "lcps/errors.hpp"
#include "lcps/postprocess.hpp"

namespace lcps {

struct ClassMatchStats {
  double iou_sum = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

/// Matching outcome pooled over one or more frames: per-class TP/FP/FN with
/// summed TP IoUs, plus the semantic confusion matrix over non-ignored
/// points (rows = ground truth, columns = prediction).
struct MatchStats {
  std::size_t num_classes = 0;
  std::vector<ClassMatchStats> per_class;
  std::vector<std::uint64_t> confusion;

  explicit MatchStats(std::size_t m = 0)
      : num_classes(m), per_class(m), confusion(m * m, 0) {}

  std::uint64_t& conf(std::size_t gt, std::size_t pred) {
    return confusion[gt * num_classes + pred];
  }
  std::uint64_t conf(std::size_t gt, std::size_t pred) const {
    return confusion[gt * num_classes + pred];
  }

  void merge(const MatchStats& other) {
    if (other.num_classes != num_classes)
      throw dimension_error("match stats: class count mismatch in merge");
    for (std::size_t c = 0; c < num_classes; ++c) {
      per_class[c].iou_sum += other.per_class[c].iou_sum;
      per_class[c].tp += other.per_class[c].tp;
      per_class[c].fp += other.per_class[c].fp;
      per_class[c].fn += other.per_class[c].fn;
    }
    for (std::size_t i = 0; i < confusion.size(); ++i)
      confusion[i] += other.confusion[i];
  }
};

/// Segment matching for panoptic quality. Thing segments are (class,
/// instance-ID) point sets with ID > 0; a stuff segment is the whole point
/// set of its class. Points whose ground-truth class is ignored are removed
/// from both labelings before anything is counted. Segments of the same
/// class match iff point-set IoU > 0.5, which makes the matching unique.
inline MatchStats match_segments(const PanopticLabeling& gt,
                                 const PanopticLabeling& pred,
                                 const ClassTable& classes) {
  gt.validate();
  pred.validate();
  if (gt.size() != pred.size())
    throw dimension_error("match_segments: labelings differ in point count");
  const std::size_t m = classes.size();
  MatchStats stats(m);

  struct Segment {
    std::int32_t cls = 0;
    std::uint64_t size = 0;
    bool matched = false;
  };
  std::vector<Segment> gt_segs, pred_segs;
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> gt_keys, pred_keys;
  std::vector<std::ptrdiff_t> gt_of(gt.size(), -1), pred_of(gt.size(), -1);

  const auto segment_of = [&](const PanopticLabeling& lab, std::size_t p,
                              auto& keys, auto& segs) -> std::ptrdiff_t {
    const std::int32_t cls = lab.semantic[p];
    if (!classes.valid_id(cls)) throw label_error("match_segments: bad class id");
    if (classes.is_ignored(cls)) return -1;
    std::pair<std::int32_t, std::int32_t> key{cls, 0};
    if (classes.is_thing(cls)) {
      if (lab.instance[p] <= 0) return -1;  // un-instanced thing points float free
      key.second = lab.instance[p];
    }
    auto [it, inserted] = keys.try_emplace(key, segs.size());
    if (inserted) segs.push_back(Segment{cls, 0, false});
    ++segs[it->second].size;
    return static_cast<std::ptrdiff_t>(it->second);
  };

  for (std::size_t p = 0; p < gt.size(); ++p) {
    const std::int32_t gcls = gt.semantic[p];
    if (!classes.valid_id(gcls)) throw label_error("match_segments: bad gt class");
    if (classes.is_ignored(gcls)) continue;  // excluded from every denominator
    const std::int32_t pcls = pred.semantic[p];
    if (!classes.valid_id(pcls)) throw label_error("match_segments: bad pred class");
    ++stats.conf(static_cast<std::size_t>(gcls), static_cast<std::size_t>(pcls));
    gt_of[p] = segment_of(gt, p, gt_keys, gt_segs);
    pred_of[p] = segment_of(pred, p, pred_keys, pred_segs);
  }

  std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> inter;
  for (std::size_t p = 0; p < gt.size(); ++p)
    if (gt_of[p] >= 0 && pred_of[p] >= 0)
      ++inter[{static_cast<std::size_t>(gt_of[p]),
               static_cast<std::size_t>(pred_of[p])}];

  for (const auto& [pair, overlap] : inter) {
    Segment& g = gt_segs[pair.first];
    Segment& q = pred_segs[pair.second];
    if (g.cls != q.cls) continue;
    const double iou = static_cast<double>(overlap) /
                       static_cast<double>(g.size + q.size - overlap);
    if (iou > 0.5) {
      g.matched = true;
      q.matched = true;
      auto& cs = stats.per_class[static_cast<std::size_t>(g.cls)];
      cs.iou_sum += iou;
      ++cs.tp;
    }
  }
  for (const Segment& g : gt_segs)
    if (!g.matched) ++stats.per_class[static_cast<std::size_t>(g.cls)].fn;
  for (const Segment& q : pred_segs)
    if (!q.matched) ++stats.per_class[static_cast<std::size_t>(q.cls)].fp;
  return stats;
}

struct ClassMetrics {
  std::int32_t id = 0;
  std::string name;
  bool is_thing = false;
  bool gt_present = false;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double pq = 0.0, sq = 0.0, rq = 0.0, iou = 0.0;
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  double pq_dagger = 0.0;
  double pq_things = 0.0, sq_things = 0.0, rq_things = 0.0;
  double pq_stuff = 0.0, sq_stuff = 0.0, rq_stuff = 0.0;
  double miou = 0.0;
};

/// PQ/SQ/RQ per class plus aggregates. Per class, PQ = sum of TP IoUs over
/// (TP + FP/2 + FN/2), SQ = mean TP IoU, RQ = TP over the same denominator.
/// Aggregates are unweighted means over classes with ground truth present;
/// PQ-dagger swaps a stuff class's PQ for its plain semantic IoU. mIoU
/// averages confusion-matrix IoU over classes present in the ground truth.
inline MetricReport panoptic_quality(const MatchStats& stats,
                                     const ClassTable& classes) {
  if (stats.num_classes != classes.size())
    throw dimension_error("panoptic_quality: stats/table class count mismatch");
  classes.validate_for_evaluation();
  MetricReport report;

  std::vector<std::uint64_t> gt_points(stats.num_classes, 0),
      pred_points(stats.num_classes, 0);
  for (std::size_t g = 0; g < stats.num_classes; ++g)
    for (std::size_t p = 0; p < stats.num_classes; ++p) {
      gt_points[g] += stats.conf(g, p);
      pred_points[p] += stats.conf(g, p);
    }

  double sum_pq = 0, sum_sq = 0, sum_rq = 0, sum_dagger = 0;
  double sum_pq_th = 0, sum_sq_th = 0, sum_rq_th = 0;
  double sum_pq_st = 0, sum_sq_st = 0, sum_rq_st = 0;
  double sum_iou = 0;
  std::size_t n_all = 0, n_th = 0, n_st = 0, n_sem = 0;

  for (std::size_t c = 0; c < stats.num_classes; ++c) {
    const ClassInfo& info = classes.classes[c];
    if (info.ignore) continue;
    const ClassMatchStats& cs = stats.per_class[c];

    ClassMetrics cm;
    cm.id = static_cast<std::int32_t>(c);
    cm.name = info.name;
    cm.is_thing = info.is_thing;
    cm.tp = cs.tp;
    cm.fp = cs.fp;
    cm.fn = cs.fn;
    cm.gt_present = cs.tp + cs.fn > 0;
    const double denom =
        static_cast<double>(cs.tp) + 0.5 * static_cast<double>(cs.fp) +
        0.5 * static_cast<double>(cs.fn);
    if (denom > 0.0) {
      cm.pq = cs.iou_sum / denom;
      cm.rq = static_cast<double>(cs.tp) / denom;
    }
    if (cs.tp > 0) cm.sq = cs.iou_sum / static_cast<double>(cs.tp);
    const std::uint64_t inter = stats.conf(c, c);
    const std::uint64_t uni = gt_points[c] + pred_points[c] - inter;
    if (uni > 0) cm.iou = static_cast<double>(inter) / static_cast<double>(uni);

    if (cm.gt_present) {
      ++n_all;
      sum_pq += cm.pq;
      sum_sq += cm.sq;
      sum_rq += cm.rq;
      sum_dagger += info.is_thing ? cm.pq : cm.iou;
      if (info.is_thing) {
        ++n_th;
        sum_pq_th += cm.pq;
        sum_sq_th += cm.sq;
        sum_rq_th += cm.rq;
      } else {
        ++n_st;
        sum_pq_st += cm.pq;
        sum_sq_st += cm.sq;
        sum_rq_st += cm.rq;
      }
    }
    if (gt_points[c] > 0) {
      ++n_sem;
      sum_iou += cm.iou;
    }
    report.per_class.push_back(std::move(cm));
  }

  if (n_all > 0) {
    report.pq = sum_pq / static_cast<double>(n_all);
    report.sq = sum_sq / static_cast<double>(n_all);
    report.rq = sum_rq / static_cast<double>(n_all);
    report.pq_dagger = sum_dagger / static_cast<double>(n_all);
  }
  if (n_th > 0) {
    report.pq_things = sum_pq_th / static_cast<double>(n_th);
    report.sq_things = sum_sq_th / static_cast<double>(n_th);
    report.rq_things = sum_rq_th / static_cast<double>(n_th);
  }
  if (n_st > 0) {
    report.pq_stuff = sum_pq_st / static_cast<double>(n_st);
    report.sq_stuff = sum_sq_st / static_cast<double>(n_st);
    report.rq_stuff = sum_rq_st / static_cast<double>(n_st);
  }
  if (n_sem > 0) report.miou = sum_iou / static_cast<double>(n_sem);
  return report;
}

struct MiouResult {
  double mean = 0.0;
  std::vector<double> per_class;
  std::vector<std::uint8_t> gt_present;
};

/// Semantic-only IoU: per-class intersection over union across points, mean
/// over classes present in the ground truth. Ignored ground-truth points are
/// skipped.
inline MiouResult miou(std::span<const std::int32_t> gt,
                       std::span<const std::int32_t> pred,
                       const ClassTable& classes) {
  if (gt.size() != pred.size())
    throw dimension_error("miou: labelings differ in point count");
  const std::size_t m = classes.size();
  std::vector<std::uint64_t> conf(m * m, 0);
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (!classes.valid_id(gt[p]) || !classes.valid_id(pred[p]))
      throw label_error("miou: bad class id");
    if (classes.is_ignored(gt[p])) continue;
    ++conf[static_cast<std::size_t>(gt[p]) * m + static_cast<std::size_t>(pred[p])];
  }

  MiouResult result;
  result.per_class.assign(m, 0.0);
  result.gt_present.assign(m, 0);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < m; ++c) {
    if (classes.classes[c].ignore) continue;
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < m; ++k) {
      row += conf[c * m + k];
      col += conf[k * m + c];
    }
    const std::uint64_t inter = conf[c * m + c];
    const std::uint64_t uni = row + col - inter;
    if (uni > 0)
      result.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    if (row > 0) {
      result.gt_present[c] = 1;
      sum += result.per_class[c];
      ++n;
    }
  }
  if (n > 0) result.mean = sum / static_cast<double>(n);
  return result;
}

inline std::string format_report_table(const MetricReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(14) << "class" << std::right << std::setw(8)
     << "PQ" << std::setw(8) << "SQ" << std::setw(8) << "RQ" << std::setw(8)
     << "IoU" << std::setw(6) << "TP" << std::setw(6) << "FP" << std::setw(6)
     << "FN" << "\n";
  for (const ClassMetrics& c : report.per_class) {
    os << std::left << std::setw(14) << c.name << std::right << std::setw(8)
       << c.pq << std::setw(8) << c.sq << std::setw(8) << c.rq << std::setw(8)
       << c.iou << std::setw(6) << c.tp << std::setw(6) << c.fp << std::setw(6)
       << c.fn << "\n";
  }
  os << std::left << std::setw(14) << "all" << std::right << std::setw(8)
     << report.pq << std::setw(8) << report.sq << std::setw(8) << report.rq
     << "\n";
  os << std::left << std::setw(14) << "things" << std::right << std::setw(8)
     << report.pq_things << std::setw(8) << report.sq_things << std::setw(8)
     << report.rq_things << "\n";
  os << std::left << std::setw(14) << "stuff" << std::right << std::setw(8)
     << report.pq_stuff << std::setw(8) << report.sq_stuff << std::setw(8)
     << report.rq_stuff << "\n";
  os << "PQ-dagger " << report.pq_dagger << "\n";
  os << "mIoU " << report.miou << "\n";
  return os.str();
}

inline std::string format_report_kv(const MetricReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "pq " << report.pq << "\n";
  os << "sq " << report.sq << "\n";
  os << "rq " << report.rq << "\n";
  os << "pq_dagger " << report.pq_dagger << "\n";
  os << "pq_things " << report.pq_things << "\n";
  os << "sq_things " << report.sq_things << "\n";
  os << "rq_things " << report.rq_things << "\n";
  os << "pq_stuff " << report.pq_stuff << "\n";
  os << "sq_stuff " << report.sq_stuff << "\n";
  os << "rq_stuff " << report.rq_stuff << "\n";
  os << "miou " << report.miou << "\n";
  for (const ClassMetrics& c : report.per_class) {
    os << "class." << c.id << ".name " << c.name << "\n";
    os << "class." << c.id << ".pq " << c.pq << "\n";
    os << "class." << c.id << ".sq " << c.sq << "\n";
    os << "class." << c.id << ".rq " << c.rq << "\n";
    os << "class." << c.id << ".iou " << c.iou << "\n";
  }
  return os.str();
}

/// Class-wise PQ rows for external bar plotting.
inline std::string format_classwise_csv(const MetricReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class_id,name,is_thing,pq,sq,rq,iou,tp,fp,fn\n";
  for (const ClassMetrics& c : report.per_class) {
    os << c.id << ',' << c.name << ',' << (c.is_thing ? 1 : 0) << ',' << c.pq
       << ',' << c.sq << ',' << c.rq << ',' << c.iou << ',' << c.tp << ','
       << c.fp << ',' << c.fn << "\n";
  }
  return os.str();
}

}  // namespace lcps
