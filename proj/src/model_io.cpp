#include "mfg/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace mfg {

namespace {

using nlohmann::json;

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name) {
    if (j.is_number()) {
        if (rows != 1 || cols != 1)
            throw std::invalid_argument("model: " + name + " given as scalar but expected " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        Eigen::MatrixXd m(1, 1);
        m(0, 0) = j.get<double>();
        return m;
    }
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("model: " + name + " must be a number or nested array");
    Eigen::MatrixXd m(rows, cols);
    if (j.front().is_number()) {
        // flat array: accepted for vectors (and 1xk rows)
        if (static_cast<Eigen::Index>(j.size()) != rows * cols)
            throw std::invalid_argument("model: " + name + " has wrong length");
        for (Eigen::Index i = 0; i < rows * cols; ++i)
            m(i / cols, i % cols) = j[static_cast<std::size_t>(i)].get<double>();
        return m;
    }
    if (static_cast<Eigen::Index>(j.size()) != rows)
        throw std::invalid_argument("model: " + name + " has wrong row count");
    for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw std::invalid_argument("model: " + name + " has wrong column count");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

PiecewiseMatrix piecewise_from_json(const json& doc, const char* name, Eigen::Index rows,
                                    Eigen::Index cols, double horizon) {
    if (!doc.contains(name))
        return PiecewiseMatrix::constant(Eigen::MatrixXd::Zero(rows, cols), horizon);
    const json& j = doc.at(name);
    if (j.is_object()) {
        PiecewiseMatrix p;
        if (!j.contains("mesh") || !j.contains("values"))
            throw std::invalid_argument(std::string("model: piecewise ") + name +
                                        " needs mesh and values");
        p.mesh = j.at("mesh").get<std::vector<double>>();
        for (const json& v : j.at("values"))
            p.values.push_back(matrix_from_json(v, rows, cols, name));
        return p;
    }
    return PiecewiseMatrix::constant(matrix_from_json(j, rows, cols, name), horizon);
}

}  // namespace

ConvexSet control_set_from_json(const nlohmann::json& doc) {
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind == "whole") return ConvexSet::whole(doc.at("dim").get<int>());
    if (kind == "orthant") return ConvexSet::orthant(doc.at("dim").get<int>());
    if (kind == "box") {
        const auto lo = doc.at("lo").get<std::vector<double>>();
        const auto hi = doc.at("hi").get<std::vector<double>>();
        return ConvexSet::box(Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size())),
                              Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())));
    }
    if (kind == "ball") {
        const auto c = doc.at("center").get<std::vector<double>>();
        return ConvexSet::ball(Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())),
                               doc.at("radius").get<double>());
    }
    throw std::invalid_argument("model: unknown control_set kind '" + kind + "'");
}

nlohmann::json control_set_to_json(const ConvexSet& set) {
    nlohmann::json j;
    j["kind"] = to_string(set.kind());
    switch (set.kind()) {
        case SetKind::Whole:
        case SetKind::Orthant:
            j["dim"] = set.dim();
            break;
        case SetKind::Box:
            j["lo"] = std::vector<double>(set.lo().data(), set.lo().data() + set.lo().size());
            j["hi"] = std::vector<double>(set.hi().data(), set.hi().data() + set.hi().size());
            break;
        case SetKind::Ball:
            j["center"] = std::vector<double>(set.center().data(), set.center().data() + set.center().size());
            j["radius"] = set.radius();
            break;
    }
    return j;
}

ModelSpec model_from_json(const nlohmann::json& doc) {
    ModelSpec spec;
    spec.state_dim = doc.at("n").get<int>();
    spec.control_dim = doc.at("m").get<int>();
    spec.horizon = doc.at("T").get<double>();
    if (spec.state_dim < 1 || spec.control_dim < 1)
        throw std::invalid_argument("model: n and m must be >= 1");
    const Eigen::Index n = spec.state_dim;
    const Eigen::Index m = spec.control_dim;

    spec.x0 = doc.contains("x0") ? matrix_from_json(doc.at("x0"), n, 1, "x0").col(0)
                                 : Eigen::VectorXd::Zero(n).eval();

    spec.A = piecewise_from_json(doc, "A", n, n, spec.horizon);
    spec.F = piecewise_from_json(doc, "F", n, n, spec.horizon);
    spec.M = piecewise_from_json(doc, "M", n, n, spec.horizon);
    spec.U_coef = doc.contains("U_coef") ? piecewise_from_json(doc, "U_coef", n, n, spec.horizon)
                                         : piecewise_from_json(doc, "U", n, n, spec.horizon);
    spec.H = piecewise_from_json(doc, "H", n, n, spec.horizon);
    spec.V = piecewise_from_json(doc, "V", n, n, spec.horizon);
    spec.B = piecewise_from_json(doc, "B", n, m, spec.horizon);
    spec.D = piecewise_from_json(doc, "D", n, m, spec.horizon);
    spec.K = piecewise_from_json(doc, "K", n, m, spec.horizon);
    spec.b = piecewise_from_json(doc, "b", n, 1, spec.horizon);
    spec.sigma = piecewise_from_json(doc, "sigma", n, 1, spec.horizon);
    spec.f = piecewise_from_json(doc, "f", n, 1, spec.horizon);
    spec.Q = piecewise_from_json(doc, "Q", n, n, spec.horizon);
    spec.L = piecewise_from_json(doc, "L", n, n, spec.horizon);
    spec.R = piecewise_from_json(doc, "R", m, m, spec.horizon);

    spec.Phi = doc.contains("Phi") ? matrix_from_json(doc.at("Phi"), n, n, "Phi")
                                   : Eigen::MatrixXd::Zero(n, n).eval();
    spec.G = doc.contains("G") ? matrix_from_json(doc.at("G"), n, n, "G")
                               : Eigen::MatrixXd::Zero(n, n).eval();

    spec.control_set = doc.contains("control_set") ? control_set_from_json(doc.at("control_set"))
                                                   : ConvexSet::whole(spec.control_dim);

    symmetrize_weights(spec);
    return spec;
}

ModelSpec load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
    try {
        return model_from_json(doc);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("model " + path + ": " + e.what());
    }
}

nlohmann::json validation_report_to_json(const ValidationReport& report) {
    nlohmann::json j;
    j["strict_pass"] = report.strict_pass;
    j["violations"] = nlohmann::json::array();
    for (const auto& v : report.violations)
        j["violations"].push_back({{"field", v.field}, {"rule", v.rule}, {"detail", v.detail}});
    return j;
}

}  // namespace mfg
