#include "invdes/pca.hpp"

namespace invdes {

std::vector<NamedArray> PcaModel::named_arrays() const {
    std::vector<NamedArray> out(3);
    out[0].name = "pca.mean";
    out[0].shape = {mean.size()};
    for (Eigen::Index i = 0; i < mean.size(); ++i) out[0].data.push_back(static_cast<float>(mean[i]));
    out[1].name = "pca.components";
    out[1].shape = {components.rows(), components.cols()};
    for (Eigen::Index r = 0; r < components.rows(); ++r)
        for (Eigen::Index c = 0; c < components.cols(); ++c)
            out[1].data.push_back(static_cast<float>(components(r, c)));
    out[2].name = "pca.variances";
    out[2].shape = {variances.size()};
    for (Eigen::Index i = 0; i < variances.size(); ++i)
        out[2].data.push_back(static_cast<float>(variances[i]));
    return out;
}

PcaModel PcaModel::from_arrays(const std::vector<NamedArray>& arrays) {
    auto find = [&](const std::string& name) -> const NamedArray& {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw IoError("pca: missing tensor '" + name + "'");
    };
    const auto& am = find("pca.mean");
    const auto& ac = find("pca.components");
    const auto& av = find("pca.variances");
    if (ac.shape.size() != 2) throw IoError("pca: bad components shape");
    PcaModel m;
    m.mean.resize(am.shape[0]);
    for (Eigen::Index i = 0; i < m.mean.size(); ++i) m.mean[i] = am.data[static_cast<std::size_t>(i)];
    m.components.resize(ac.shape[0], ac.shape[1]);
    for (Eigen::Index r = 0; r < ac.shape[0]; ++r)
        for (Eigen::Index c = 0; c < ac.shape[1]; ++c)
            m.components(r, c) = ac.data[static_cast<std::size_t>(r * ac.shape[1] + c)];
    m.variances.resize(av.shape[0]);
    for (Eigen::Index i = 0; i < m.variances.size(); ++i)
        m.variances[i] = av.data[static_cast<std::size_t>(i)];
    return m;
}

PcaModel pca_fit(const Eigen::MatrixXd& data, Eigen::Index M) {
    const Eigen::Index n = data.rows(), D = data.cols();
    if (n < M + 1) throw ConfigError("pca: need at least M+1 images");
    if (M < 1) throw ConfigError("pca: M must be >= 1");

    PcaModel model;
    model.mean = data.colwise().mean();
    Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double tol = static_cast<double>(std::max(n, D)) * sv[0] *
                       std::numeric_limits<double>::epsilon();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++rank;
    if (M > rank)
        throw ConfigError("pca: M = " + std::to_string(M) + " exceeds data rank " +
                          std::to_string(rank));

    model.components = svd.matrixV().leftCols(M).transpose();
    model.variances.resize(M);
    for (Eigen::Index i = 0; i < M; ++i)
        model.variances[i] = sv[i] * sv[i] / static_cast<double>(n);

    // SVD leaves the sign of each direction arbitrary; pin it so fits are
    // reproducible byte for byte
    for (Eigen::Index r = 0; r < M; ++r) {
        Eigen::Index imax = 0;
        model.components.row(r).cwiseAbs().maxCoeff(&imax);
        if (model.components(r, imax) < 0.0) model.components.row(r) = -model.components.row(r);
    }
    return model;
}

Eigen::VectorXd pca_transform(const PcaModel& model, const Eigen::VectorXd& image) {
    if (image.size() != model.dimension()) throw ShapeError("pca_transform: dimension mismatch");
    return model.components * (image - model.mean);
}

Eigen::VectorXd pca_inverse(const PcaModel& model, const Eigen::VectorXd& coefficients) {
    if (coefficients.size() != model.n_components())
        throw ShapeError("pca_inverse: coefficient count mismatch");
    return model.mean + model.components.transpose() * coefficients;
}

}  // namespace invdes
