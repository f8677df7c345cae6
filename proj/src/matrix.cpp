#include "dlab/matrix.hpp"

#include <stdexcept>

namespace dlab {

Matrix matrix_from_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) throw std::invalid_argument("matrix_from_rows: no rows");
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols)
            throw std::invalid_argument("matrix_from_rows: ragged rows");
        for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
    }
    return m;
}

}  // namespace dlab
