#include "crfrefine/config_json.hpp"

namespace crfrefine {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

void to_json(json& j, const EngineConfig& c) {
  j = json{{"alpha", c.weights.alpha},
           {"beta", c.weights.beta},
           {"temperature", c.temperature},
           {"max_iterations", c.max_iterations},
           {"tol", c.convergence_tol},
           {"damping", c.damping},
           {"clamp_annotations", c.clamp_annotations}};
}

void from_json(const json& j, EngineConfig& c) {
  read_if(j, "alpha", c.weights.alpha);
  read_if(j, "beta", c.weights.beta);
  read_if(j, "temperature", c.temperature);
  read_if(j, "max_iterations", c.max_iterations);
  read_if(j, "tol", c.convergence_tol);
  read_if(j, "damping", c.damping);
  read_if(j, "clamp_annotations", c.clamp_annotations);
}

void to_json(json& j, const IndexConfig& c) {
  j = json{{"k_base", c.k_base},
           {"k_ann", c.k_ann},
           {"pool_factor", c.pool_factor},
           {"seed", c.seed},
           {"pairwise_term", to_string(c.base_term)}};
}

void from_json(const json& j, IndexConfig& c) {
  read_if(j, "k_base", c.k_base);
  read_if(j, "k_ann", c.k_ann);
  read_if(j, "pool_factor", c.pool_factor);
  read_if(j, "seed", c.seed);
  if (auto it = j.find("pairwise_term"); it != j.end() && !it->is_null()) {
    c.base_term = parse_pairwise_term(it->get<std::string>());
  }
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"num_classes", s.num_classes},
           {"patches_per_class", s.patches_per_class},
           {"dim_unary", s.dim_unary},
           {"dim_pairwise", s.dim_pairwise},
           {"cluster_separation", s.cluster_separation},
           {"unary_noise", s.unary_noise},
           {"unary_common_component", s.unary_common_component},
           {"unary_jitter", s.unary_jitter},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  read_if(j, "num_classes", s.num_classes);
  read_if(j, "patches_per_class", s.patches_per_class);
  read_if(j, "dim_unary", s.dim_unary);
  read_if(j, "dim_pairwise", s.dim_pairwise);
  read_if(j, "cluster_separation", s.cluster_separation);
  read_if(j, "unary_noise", s.unary_noise);
  read_if(j, "unary_common_component", s.unary_common_component);
  read_if(j, "unary_jitter", s.unary_jitter);
  read_if(j, "seed", s.seed);
}

void to_json(json& j, const LpConfig& c) {
  j = json{{"alpha_lp", c.alpha_lp},
           {"k_graph", c.k_graph},
           {"solver", to_string(c.solver)},
           {"iter_tol", c.iter_tol},
           {"iter_max", c.iter_max},
           {"closed_form_max_n", c.closed_form_max_n}};
}

void from_json(const json& j, LpConfig& c) {
  read_if(j, "alpha_lp", c.alpha_lp);
  read_if(j, "k_graph", c.k_graph);
  if (auto it = j.find("solver"); it != j.end() && !it->is_null()) c.solver = parse_lp_solver(it->get<std::string>());
  read_if(j, "iter_tol", c.iter_tol);
  read_if(j, "iter_max", c.iter_max);
  read_if(j, "closed_form_max_n", c.closed_form_max_n);
}

}  // namespace crfrefine
