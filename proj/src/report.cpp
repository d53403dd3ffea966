#include "hynea/report.hpp"

#include "hynea/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hynea::report {

using metrics::Matrix;

Matrix detection_slice(const sut::Prediction& p, const std::vector<std::size_t>& anchors) {
    Matrix m(static_cast<Eigen::Index>(anchors.size()), static_cast<Eigen::Index>(sut::kDetClasses));
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto row = sut::detection_row(p, anchors[i]);
        for (std::size_t c = 0; c < row.size(); ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    }
    return m;
}

Matrix origin_class_probability(const sut::Prediction& p, const sut::TargetSpec& spec) {
    const Matrix logits = detection_slice(p, spec.anchors);
    Matrix out(logits.rows(), 1);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const double z = (logits.row(i).array() - m).exp().sum();
        out(i, 0) = std::exp(logits(i, static_cast<Eigen::Index>(spec.anchor_origin[static_cast<std::size_t>(i)])) - m) / z;
    }
    return out;
}

bool class_evicted(const sut::Prediction& p, const std::vector<std::size_t>& anchors, std::size_t cls) {
    for (std::size_t a : anchors)
        if (sut::detection_class(p, a) == cls) return false;
    return true;
}

bool class_evicted(const sut::Prediction& p, std::size_t cls) { return class_evicted(p, sut::top5(p), cls); }

std::size_t prediction_label(const sut::Prediction& p, std::size_t attribute) {
    switch (p.kind) {
        case sut::TaskKind::multiclass: return sut::argmax(p.logits.data());
        case sut::TaskKind::binary: return p.logits[attribute] > 0.0 ? 1 : 0;
        case sut::TaskKind::detection: return sut::detection_class(p, sut::top5(p).front());
    }
    return 0;
}

namespace {

Matrix rows_of(const std::vector<const gen::TestCaseRecord*>& rs, bool result) {
    const std::size_t c = (result ? rs.front()->result_pred : rs.front()->origin_pred).logits.size();
    Matrix m(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const auto v = (result ? rs[i]->result_pred : rs[i]->origin_pred).logits.data();
        for (std::size_t j = 0; j < c; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
    return m;
}

// rows x cols block starting at element `offset` of t.
Matrix to_matrix(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const auto v = t.data().subspan(offset, rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * cols + j];
    return m;
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json mean_sd_json(const metrics::MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

MetricsReport summarize(const std::vector<gen::TestCaseRecord>& records, const sut::Classifier& embedder) {
    MetricsReport r;
    r.cases = records.size();
    if (!records.empty()) r.task = records.front().task;
    std::vector<const gen::TestCaseRecord*> ok, hit;
    for (const auto& rec : records) {
        if (!rec.valid) continue;
        ok.push_back(&rec);
        if (rec.misbehavior) hit.push_back(&rec);
    }
    r.valid = ok.size();
    r.misbehaviors = hit.size();
    if (ok.empty()) return r;
    r.misbehavior_rate = static_cast<double>(hit.size()) / static_cast<double>(ok.size());

    std::vector<double> ssim, evals, steps, wall;
    for (const auto* rec : ok) {
        ssim.push_back(metrics::ms_ssim(rec->origin_image, rec->result_image));
        evals.push_back(static_cast<double>(rec->sut_evals));
        steps.push_back(static_cast<double>(rec->steps));
        wall.push_back(rec->wall_seconds);
    }
    r.ms_ssim = metrics::mean_sd(ssim);
    r.sut_evals = metrics::mean_sd(evals);
    r.steps = metrics::mean_sd(steps);
    r.wall_seconds = metrics::mean_sd(wall);

    switch (r.task) {
        case sut::TaskKind::multiclass:
            if (!hit.empty()) r.escape = metrics::escape_multiclass(rows_of(hit, false), rows_of(hit, true));
            break;
        case sut::TaskKind::binary:
            if (!hit.empty()) {
                double total = 0.0;
                for (const auto* rec : hit) {
                    total += metrics::escape_binary(rows_of({rec}, false), rows_of({rec}, true), rec->attribute);
                }
                r.escape = total / static_cast<double>(hit.size());
            }
            break;
        case sut::TaskKind::detection: {
            Matrix before(static_cast<Eigen::Index>(ok.size() * sut::kTopK), 1), after = before;
            std::size_t evicted = 0, evicted_reranked = 0;
            for (std::size_t i = 0; i < ok.size(); ++i) {
                const Matrix b = origin_class_probability(ok[i]->origin_pred, ok[i]->spec);
                const Matrix a = origin_class_probability(ok[i]->result_pred, ok[i]->spec);
                before.block(static_cast<Eigen::Index>(i * sut::kTopK), 0, b.rows(), 1) = b;
                after.block(static_cast<Eigen::Index>(i * sut::kTopK), 0, a.rows(), 1) = a;
                evicted += class_evicted(ok[i]->result_pred, ok[i]->spec.anchors, ok[i]->cond);
                evicted_reranked += class_evicted(ok[i]->result_pred, ok[i]->cond);
            }
            r.confidence_reduction = metrics::confidence_reduction(before, after);
            r.eviction_rate = static_cast<double>(evicted) / static_cast<double>(ok.size());
            r.eviction_rate_reranked = static_cast<double>(evicted_reranked) / static_cast<double>(ok.size());
            break;
        }
    }

    if (ok.size() >= 2) {
        std::vector<Tensor> origins, results;
        for (const auto* rec : ok) {
            origins.push_back(rec->origin_image);
            results.push_back(rec->result_image);
        }
        NoGradGuard ng;
        const Tensor xo = data::stack_images(origins), xr = data::stack_images(results);
        const std::size_t n = ok.size(), width = embedder.embed(xo).dim(1);
        const Matrix eo = to_matrix(embedder.embed(xo), n, width), er = to_matrix(embedder.embed(xr), n, width);
        r.diversity_origin = metrics::embedding_diversity(eo);
        r.diversity_result = metrics::embedding_diversity(er);
        r.frechet = metrics::frechet_distance(er, eo);
        const Tensor fo = embedder.feature_map(xo), fr = embedder.feature_map(xr);
        const std::size_t ch = fo.dim(1), pos = fo.dim(2) * fo.dim(3);
        double td = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix a = to_matrix(fo, ch, pos, i * ch * pos), b = to_matrix(fr, ch, pos, i * ch * pos);
            td += metrics::trace_diff(a, b);
        }
        r.trace_diff = td / static_cast<double>(n);
    }
    return r;
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"task", sut::task_name(r.task)},
            {"cases", r.cases},
            {"valid", r.valid},
            {"misbehaviors", r.misbehaviors},
            {"misbehavior_rate", r.misbehavior_rate},
            {"ms_ssim", mean_sd_json(r.ms_ssim)},
            {"sut_evals", mean_sd_json(r.sut_evals)},
            {"steps", mean_sd_json(r.steps)},
            {"wall_seconds", mean_sd_json(r.wall_seconds)},
            {"escape_ratio", number(r.escape)},
            {"confidence_reduction", number(r.confidence_reduction)},
            {"eviction_rate", number(r.eviction_rate)},
            {"eviction_rate_reranked", number(r.eviction_rate_reranked)},
            {"diversity_origin", number(r.diversity_origin)},
            {"diversity_result", number(r.diversity_result)},
            {"trace_diff", number(r.trace_diff)},
            {"frechet", number(r.frechet)}};
}

void write_records_csv(const std::string& path, const std::vector<gen::TestCaseRecord>& records) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "case_id,task,cond,attribute,seed,used_seed,valid,misbehavior,terminated_early,steps,sut_evals,"
         "fidelity,behavior,ms_ssim,origin_label,result_label,error\n";
    char buf[512];
    for (const auto& r : records) {
        const bool has_images = r.origin_image.size() > 0 && r.result_image.size() > 0;
        const double ssim = has_images ? metrics::ms_ssim(r.origin_image, r.result_image) : 0.0;
        const bool has_pred = r.origin_pred.logits.size() > 0 && r.result_pred.logits.size() > 0;
        const std::size_t lo = has_pred ? prediction_label(r.origin_pred, r.attribute) : 0;
        const std::size_t lr = has_pred ? prediction_label(r.result_pred, r.attribute) : 0;
        std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%zu,%llu,%llu,%d,%d,%d,%zu,%zu,%.10e,%.10e,%.10e,%zu,%zu,", r.case_id,
                      sut::task_name(r.task), r.cond, r.attribute, static_cast<unsigned long long>(r.seed),
                      static_cast<unsigned long long>(r.used_seed), r.valid ? 1 : 0, r.misbehavior ? 1 : 0,
                      r.terminated_early ? 1 : 0, r.steps, r.sut_evals, r.fidelity, r.behavior, ssim, lo, lr);
        f << buf << csv_quote(r.error) << '\n';
    }
}

void write_timings_csv(const std::string& path, const std::vector<gen::TestCaseRecord>& records) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "case_id,wall_seconds\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", r.case_id, r.wall_seconds);
        f << buf;
    }
}

void write_image_pairs(const std::string& dir, const std::vector<gen::TestCaseRecord>& records) {
    std::filesystem::create_directories(dir);
    char name[64];
    for (const auto& r : records) {
        if (r.origin_image.size() == 0) continue;
        std::snprintf(name, sizeof name, "case_%03zu_origin.pgm", r.case_id);
        data::write_pgm((std::filesystem::path(dir) / name).string(), r.origin_image);
        std::snprintf(name, sizeof name, "case_%03zu_result.pgm", r.case_id);
        data::write_pgm((std::filesystem::path(dir) / name).string(), r.result_image);
    }
}

}  // namespace hynea::report
