#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "graphsail/distill.hpp"
#include "graphsail/eval.hpp"
#include "graphsail/protocol.hpp"
#include "graphsail/run_config.hpp"
#include "graphsail/synthetic.hpp"
#include "graphsail/train.hpp"

namespace py = pybind11;
using namespace graphsail;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::memcpy(arr.mutable_data(), m.data().data(), m.data().size() * sizeof(double));
  return arr;
}

Matrix from_numpy(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 2) throw ConfigError("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
  std::memcpy(m.data().data(), arr.data(), m.data().size() * sizeof(double));
  return m;
}

py::array_t<std::int64_t> records_to_numpy(const InteractionLog& log) {
  py::array_t<std::int64_t> arr({log.records.size(), static_cast<std::size_t>(3)});
  auto view = arr.mutable_unchecked<2>();
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    view(k, 0) = log.records[k].user;
    view(k, 1) = log.records[k].item;
    view(k, 2) = log.records[k].time;
  }
  return arr;
}

std::vector<Interaction> interactions_from_numpy(
    py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 3)
    throw ConfigError("expected an (n, 3) array of (user, item, time)");
  auto view = arr.unchecked<2>();
  std::vector<Interaction> out(static_cast<std::size_t>(arr.shape(0)));
  for (py::ssize_t k = 0; k < arr.shape(0); ++k) {
    out[static_cast<std::size_t>(k)] = {static_cast<std::uint32_t>(view(k, 0)),
                                        static_cast<std::uint32_t>(view(k, 1)), view(k, 2)};
  }
  return out;
}

InteractionLog log_from_numpy(
    py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> arr,
    std::uint32_t n_users, std::uint32_t n_items) {
  InteractionLog log;
  log.records = interactions_from_numpy(arr);
  log.n_users = n_users;
  log.n_items = n_items;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    log.user_ids.push_back(std::to_string(u));
    log.user_map.emplace(log.user_ids.back(), u);
  }
  for (std::uint32_t i = 0; i < n_items; ++i) {
    log.item_ids.push_back(std::to_string(i));
    log.item_map.emplace(log.item_ids.back(), i);
  }
  return log;
}

py::dict grads_to_dict(const SparseRowGrads& g, std::size_t dim) {
  py::dict out;
  for (std::size_t k = 0; k < g.size(); ++k) {
    py::array_t<double> row(dim);
    std::memcpy(row.mutable_data(), g.row_val(k), dim * sizeof(double));
    out[py::int_(g.row_id(k))] = row;
  }
  return out;
}

py::tuple loss_to_tuple(const LossOut& l, std::size_t dim) {
  return py::make_tuple(l.loss, grads_to_dict(l.grads.users, dim),
                        grads_to_dict(l.grads.items, dim));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "GraphSAIL incremental recommender core";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<DivergenceError>(m, "DivergenceError");

  py::class_<InteractionLog>(m, "InteractionLog")
      .def_readonly("n_users", &InteractionLog::n_users)
      .def_readonly("n_items", &InteractionLog::n_items)
      .def("__len__", [](const InteractionLog& log) { return log.records.size(); })
      .def("records", &records_to_numpy, "records as an (n, 3) int64 array");

  m.def("log_from_records", &log_from_numpy, py::arg("records"), py::arg("n_users"),
        py::arg("n_items"), "build a log from an (n, 3) array of dense-id records");

  m.def(
      "parse_interactions_text",
      [](const std::string& text, const std::string& format, int user_col, int item_col,
         int time_col, bool skip_header, std::int64_t time_divisor) {
        ParseOptions opts;
        opts.format = format == "csv" ? FileFormat::Csv : FileFormat::Tsv;
        opts.user_col = user_col;
        opts.item_col = item_col;
        opts.time_col = time_col;
        opts.skip_header = skip_header;
        opts.time_divisor = time_divisor;
        return parse_interactions_text(text, opts);
      },
      py::arg("text"), py::arg("format") = "tsv", py::arg("user_col") = 0, py::arg("item_col") = 1,
      py::arg("time_col") = 2, py::arg("skip_header") = false, py::arg("time_divisor") = 1);

  m.def("preprocess", &preprocess, py::arg("log"), py::arg("dedup"), py::arg("min_degree"));

  m.def(
      "temporal_split",
      [](const InteractionLog& log, double base_frac, std::size_t n_inc) {
        return temporal_split(log, base_frac, n_inc).boundaries;
      },
      py::arg("log"), py::arg("base_frac"), py::arg("n_inc"),
      "record-index boundaries: [base_end, inc1_end, ...]");

  py::class_<BipartiteGraph, std::shared_ptr<BipartiteGraph>>(m, "BipartiteGraph")
      .def_property_readonly("n_users", &BipartiteGraph::n_users)
      .def_property_readonly("n_items", &BipartiteGraph::n_items)
      .def_property_readonly("n_edges", &BipartiteGraph::n_edges)
      .def("degree",
           [](const BipartiteGraph& g, const std::string& side, std::uint32_t node) {
             return g.degree(side == "user" ? Side::User : Side::Item, node);
           })
      .def("neighbors",
           [](const BipartiteGraph& g, const std::string& side, std::uint32_t node) {
             auto nb = g.neighbors(side == "user" ? Side::User : Side::Item, node);
             return std::vector<std::uint32_t>(nb.begin(), nb.end());
           })
      .def(
          "sample_neighbors",
          [](const BipartiteGraph& g, const std::string& side, std::uint32_t node, std::size_t n,
             std::uint64_t seed) {
            Rng rng(seed);
            return g.sample_neighbors(side == "user" ? Side::User : Side::Item, node, n, rng);
          },
          py::arg("side"), py::arg("node"), py::arg("n"), py::arg("seed") = 0);

  m.def(
      "build_graph",
      [](py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> records,
         std::uint32_t n_users, std::uint32_t n_items,
         std::shared_ptr<BipartiteGraph> base) {
        const auto recs = interactions_from_numpy(records);
        return std::make_shared<BipartiteGraph>(BipartiteGraph::build(
            {recs.data(), recs.size()}, n_users, n_items, base ? base.get() : nullptr));
      },
      py::arg("records"), py::arg("n_users"), py::arg("n_items"),
      py::arg("base") = std::shared_ptr<BipartiteGraph>());

  py::class_<ModelState>(m, "ModelState")
      .def_property_readonly("dim", [](const ModelState& s) { return s.dim; })
      .def_property_readonly("layers", [](const ModelState& s) { return s.layers; })
      .def_property_readonly("e_user", [](const ModelState& s) { return to_numpy(s.e_user); })
      .def_property_readonly("e_item", [](const ModelState& s) { return to_numpy(s.e_item); })
      .def_property_readonly("w_user", [](const ModelState& s) { return to_numpy(s.w_user); })
      .def_property_readonly("w_item", [](const ModelState& s) { return to_numpy(s.w_item); });

  m.def(
      "init_model",
      [](std::uint32_t n_users, std::uint32_t n_items, std::size_t dim, int layers,
         std::uint64_t seed) { return init_model(n_users, n_items, dim, layers, Rng(seed)); },
      py::arg("n_users"), py::arg("n_items"), py::arg("dim"), py::arg("layers") = 1,
      py::arg("seed") = 0);

  py::class_<FinalEmbeddings>(m, "FinalEmbeddings")
      .def_property_readonly("users", [](const FinalEmbeddings& f) { return to_numpy(f.users); })
      .def_property_readonly("items", [](const FinalEmbeddings& f) { return to_numpy(f.items); });

  m.def(
      "final_embeddings",
      [](const ModelState& model, const BipartiteGraph& g, std::size_t n_sample,
         std::uint64_t seed) {
        return compute_final_embeddings(model, g, n_sample, Rng(seed));
      },
      py::arg("model"), py::arg("graph"), py::arg("n_sample") = 10, py::arg("seed") = 0);

  m.def("score_pairs", [](const FinalEmbeddings& emb,
                          const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
    return score_pairs(emb, pairs);
  });

  m.def(
      "bpr_loss",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> u,
         py::array_t<double, py::array::c_style | py::array::forcecast> i,
         py::array_t<double, py::array::c_style | py::array::forcecast> j, double l2) {
        BprResult r = bpr_loss(from_numpy(u), from_numpy(i), from_numpy(j), l2);
        return py::make_tuple(r.loss, to_numpy(r.d_u), to_numpy(r.d_i), to_numpy(r.d_j));
      },
      py::arg("emb_u"), py::arg("emb_i"), py::arg("emb_j"), py::arg("l2") = 0.0);

  m.def(
      "kmeans_cluster",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> points, std::size_t k,
         std::uint64_t seed, std::size_t max_iter, double tol) {
        KmeansResult r = kmeans_cluster(from_numpy(points), k, Rng(seed), max_iter, tol);
        return py::make_tuple(r.assignments, to_numpy(r.centroids), r.objective_trace);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 100,
      py::arg("tol") = 1e-4);

  m.def(
      "anchor_distribution",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> emb,
         py::array_t<double, py::array::c_style | py::array::forcecast> anchors, double tau) {
        if (emb.ndim() != 1) throw ConfigError("anchor_distribution: emb must be 1-d");
        std::vector<double> row(emb.data(), emb.data() + emb.shape(0));
        return anchor_distribution(row, from_numpy(anchors), tau);
      },
      py::arg("emb"), py::arg("anchors"), py::arg("tau"));

  py::class_<TeacherSnapshot>(m, "TeacherSnapshot")
      .def_property_readonly("anchors_user",
                             [](const TeacherSnapshot& t) { return to_numpy(t.anchors_user); })
      .def_property_readonly("anchors_item",
                             [](const TeacherSnapshot& t) { return to_numpy(t.anchors_item); })
      .def_property_readonly("embeddings", [](const TeacherSnapshot& t) { return t.emb; })
      .def_readonly("eta_norm_user", &TeacherSnapshot::eta_norm_user)
      .def_readonly("eta_norm_item", &TeacherSnapshot::eta_norm_item);

  m.def(
      "make_teacher_snapshot",
      [](const ModelState& model, std::shared_ptr<BipartiteGraph> prev_graph,
         std::size_t k_clusters, double tau, std::uint64_t seed,
         const std::vector<std::uint32_t>& block_user_deg,
         const std::vector<std::uint32_t>& block_item_deg, std::size_t n_sample) {
        return make_teacher_snapshot(model, std::move(prev_graph), k_clusters, tau, Rng(seed),
                                     block_user_deg, block_item_deg, n_sample);
      },
      py::arg("model"), py::arg("prev_graph"), py::arg("k_clusters"), py::arg("tau"),
      py::arg("seed"), py::arg("block_user_deg"), py::arg("block_item_deg"),
      py::arg("n_sample") = 10);

  py::class_<StudentAnchors>(m, "StudentAnchors")
      .def_property_readonly("users", [](const StudentAnchors& a) { return to_numpy(a.users); })
      .def_property_readonly("items", [](const StudentAnchors& a) { return to_numpy(a.items); });

  m.def("compute_student_anchors",
        [](const FinalEmbeddings& student, const TeacherSnapshot& teacher) {
          FullTableView view(student);
          return compute_student_anchors(view, teacher);
        });

  m.def(
      "self_distill_loss",
      [](const FinalEmbeddings& student, const TeacherSnapshot& teacher,
         const std::vector<std::uint32_t>& users, const std::vector<std::uint32_t>& items) {
        FullTableView view(student);
        return loss_to_tuple(self_distill_loss(view, teacher, users, items), view.dim());
      },
      "returns (loss, user_grads, item_grads)");

  m.def("embd_baseline_loss", [](const FinalEmbeddings& student, const TeacherSnapshot& teacher,
                                 const std::vector<std::uint32_t>& users,
                                 const std::vector<std::uint32_t>& items) {
    FullTableView view(student);
    return loss_to_tuple(embd_baseline_loss(view, teacher, users, items), view.dim());
  });

  m.def("local_distill_loss", [](const FinalEmbeddings& student, const TeacherSnapshot& teacher,
                                 const std::vector<std::uint32_t>& users,
                                 const std::vector<std::uint32_t>& items) {
    FullTableView view(student);
    return loss_to_tuple(local_distill_loss(view, teacher, users, items), view.dim());
  });

  m.def("global_distill_loss",
        [](const FinalEmbeddings& student, const TeacherSnapshot& teacher,
           const StudentAnchors& anchors, double tau, const std::vector<std::uint32_t>& users,
           const std::vector<std::uint32_t>& items) {
          FullTableView view(student);
          return loss_to_tuple(global_distill_loss(view, teacher, anchors, tau, users, items),
                               view.dim());
        });

  m.def("lsp_baseline_loss",
        [](const FinalEmbeddings& student, const TeacherSnapshot& teacher, std::size_t n_nbrs,
           double tau, std::uint64_t seed, const std::vector<std::uint32_t>& users,
           const std::vector<std::uint32_t>& items) {
          FullTableView view(student);
          return loss_to_tuple(
              lsp_baseline_loss(view, teacher, n_nbrs, tau, Rng(seed), users, items), view.dim());
        });

  m.def(
      "recall_at_k",
      [](const FinalEmbeddings& emb,
         py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> test,
         const BipartiteGraph& mask, std::size_t k) {
        const auto recs = interactions_from_numpy(test);
        return recall_at_k(emb, recs, mask, k);
      },
      py::arg("embeddings"), py::arg("test_records"), py::arg("mask_graph"), py::arg("k") = 20);

  m.def(
      "make_two_phase",
      [](std::uint32_t n_users, std::uint32_t n_items, std::uint32_t n_groups,
         std::uint32_t base_per_user, std::uint32_t inc_per_user, double shift_fraction,
         double noise, std::uint64_t seed) {
        TwoPhaseConfig cfg;
        cfg.n_users = n_users;
        cfg.n_items = n_items;
        cfg.n_groups = n_groups;
        cfg.base_per_user = base_per_user;
        cfg.inc_per_user = inc_per_user;
        cfg.shift_fraction = shift_fraction;
        cfg.noise = noise;
        cfg.seed = seed;
        TwoPhaseData data = make_two_phase(cfg);
        py::array_t<std::int64_t> holdout({data.holdout.size(), static_cast<std::size_t>(3)});
        auto view = holdout.mutable_unchecked<2>();
        for (std::size_t k = 0; k < data.holdout.size(); ++k) {
          view(k, 0) = data.holdout[k].user;
          view(k, 1) = data.holdout[k].item;
          view(k, 2) = data.holdout[k].time;
        }
        return py::make_tuple(data.log, data.phase1_count, holdout);
      },
      py::arg("n_users") = 500, py::arg("n_items") = 300, py::arg("n_groups") = 5,
      py::arg("base_per_user") = 20, py::arg("inc_per_user") = 8, py::arg("shift_fraction") = 0.5,
      py::arg("noise") = 0.1, py::arg("seed") = 0);

  m.def(
      "run_experiment",
      [](const std::string& config_json, bool deterministic) {
        RunConfig cfg = parse_run_config(config_json);
        if (cfg.threads > 0) set_max_threads(cfg.threads);
        InteractionLog log = load_dataset(cfg);
        BlockSplit split = temporal_split(log, cfg.base_frac, cfg.n_inc);
        ProtocolConfig pcfg;
        pcfg.dim = cfg.dim;
        pcfg.layers = cfg.layers;
        pcfg.train = cfg.train;
        pcfg.distill = cfg.distill;
        pcfg.methods = cfg.methods;
        pcfg.seeds = cfg.seeds;
        pcfg.deterministic = deterministic;
        pcfg.config_echo = cfg.to_json();
        return run_protocol(split, pcfg).to_json(false);
      },
      py::arg("config_json"), py::arg("deterministic") = false,
      "run the full incremental protocol from a JSON config; returns the report as JSON");
}
