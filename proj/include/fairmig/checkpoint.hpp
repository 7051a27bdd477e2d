#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairmig/model.hpp"
#include "fairmig/optimizer.hpp"

namespace fairmig {

using Json = nlohmann::ordered_json;

inline Json matrix_to_json(const Mat& m) {
    Json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

inline Mat matrix_from_json(const Json& j) {
    Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
        throw SchemaError("matrix payload size mismatch");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[k++].get<double>();
    return m;
}

inline Json adam_to_json(const AdamState& s) {
    Json j;
    j["t"] = s.t;
    j["beta1"] = s.beta1;
    j["beta2"] = s.beta2;
    j["eps"] = s.eps;
    Json m = Json::array(), v = Json::array();
    for (const Mat& x : s.m) m.push_back(matrix_to_json(x));
    for (const Mat& x : s.v) v.push_back(matrix_to_json(x));
    j["m"] = std::move(m);
    j["v"] = std::move(v);
    return j;
}

inline AdamState adam_from_json(const Json& j) {
    AdamState s;
    s.t = j.at("t").get<long>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    for (const auto& x : j.at("m")) s.m.push_back(matrix_from_json(x));
    for (const auto& x : j.at("v")) s.v.push_back(matrix_from_json(x));
    return s;
}

struct Checkpoint {
    ModelBundle models;
    std::map<std::string, AdamState> optimizers;
    std::uint64_t seed = 0;
};

inline Json checkpoint_to_json(Checkpoint& ckpt) {
    Json j;
    j["schema_version"] = 1;
    EncoderParams& e = ckpt.models.encoder;
    j["backbone"] = to_string(e.backbone);
    j["dims"] = {{"in_dim", e.in_dim},
                 {"hidden_dim", e.hidden_dim},
                 {"out_dim", e.out_dim},
                 {"n_layers", e.n_layers},
                 {"appnp_teleport", e.appnp_teleport},
                 {"appnp_iterations", e.appnp_iterations}};
    j["seed"] = ckpt.seed;
    Json params;
    for (auto& [name, mat] : params_of(ckpt.models.encoder)) params[name] = matrix_to_json(*mat);
    for (auto& [name, mat] : params_of(ckpt.models.heads.decoder, "decoder"))
        params[name] = matrix_to_json(*mat);
    for (auto& [name, mat] : params_of(ckpt.models.heads.classifier, "classifier"))
        params[name] = matrix_to_json(*mat);
    for (auto& [name, mat] : params_of(ckpt.models.heads.estimator))
        params[name] = matrix_to_json(*mat);
    for (auto& [name, mat] : params_of(ckpt.models.heads.adversary, "adversary"))
        params[name] = matrix_to_json(*mat);
    j["params"] = std::move(params);
    Json opts;
    for (auto& [name, st] : ckpt.optimizers) opts[name] = adam_to_json(st);
    j["optimizers"] = std::move(opts);
    return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
    Checkpoint ckpt;
    const auto& dims = j.at("dims");
    const int in_dim = dims.at("in_dim").get<int>();
    const int hidden = dims.at("hidden_dim").get<int>();
    const int out = dims.at("out_dim").get<int>();
    ckpt.models = init_models(backbone_from_string(j.at("backbone").get<std::string>()), in_dim,
                              hidden, out, dims.at("n_layers").get<int>(),
                              dims.at("appnp_teleport").get<double>(),
                              dims.at("appnp_iterations").get<int>(), 0);
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    const auto& params = j.at("params");
    auto restore = [&](ParamRefs refs) {
        for (auto& [name, mat] : refs) {
            if (!params.contains(name)) throw SchemaError("checkpoint missing parameter " + name);
            Mat loaded = matrix_from_json(params.at(name));
            if (loaded.rows() != mat->rows() || loaded.cols() != mat->cols())
                throw SchemaError("checkpoint shape mismatch for " + name);
            *mat = std::move(loaded);
        }
    };
    restore(params_of(ckpt.models.encoder));
    restore(params_of(ckpt.models.heads.decoder, "decoder"));
    restore(params_of(ckpt.models.heads.classifier, "classifier"));
    restore(params_of(ckpt.models.heads.estimator));
    restore(params_of(ckpt.models.heads.adversary, "adversary"));
    if (j.contains("optimizers"))
        for (auto it = j.at("optimizers").begin(); it != j.at("optimizers").end(); ++it)
            ckpt.optimizers[it.key()] = adam_from_json(it.value());
    return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write " + path.string());
    out << checkpoint_to_json(ckpt).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    Json j;
    in >> j;
    return checkpoint_from_json(j);
}

}  // namespace fairmig
