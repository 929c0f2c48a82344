#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;

PYBIND11_MODULE(_mmfuse, m) {
    m.doc() = "cross-modal fusion trainer (placeholder)";
}
