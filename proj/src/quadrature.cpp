#include "stem/quadrature.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace stem {

namespace {

struct WorkspaceDeleter {
    void operator()(gsl_integration_workspace* w) const {
        gsl_integration_workspace_free(w);
    }
};

double call_target(double x, void* params) {
    const auto* f = static_cast<const std::function<double(double)>*>(params);
    return (*f)(x);
}

void disable_gsl_abort() {
    static std::once_flag once;
    std::call_once(once, [] { gsl_set_error_handler_off(); });
}

} // namespace

double integrate(const std::function<double(double)>& f,
                 double a,
                 double b,
                 double abs_tol) {
    if (!(abs_tol > 0.0)) throw std::runtime_error("integrate: tolerance must be positive");
    if (a == b) return 0.0;
    disable_gsl_abort();

    thread_local std::unique_ptr<gsl_integration_workspace, WorkspaceDeleter> ws(
        gsl_integration_workspace_alloc(4096));

    gsl_function target;
    target.function = &call_target;
    target.params = const_cast<std::function<double(double)>*>(&f);

    double result = 0.0;
    double abserr = 0.0;
    const int status = gsl_integration_qag(&target, a, b, abs_tol, 0.0, 4096,
                                           GSL_INTEG_GAUSS21, ws.get(), &result, &abserr);
    // Roundoff-limited results near the tolerance are acceptable; anything
    // with a genuinely uncontrolled error estimate is not.
    if (status != GSL_SUCCESS && abserr > 100.0 * abs_tol) {
        throw std::runtime_error("integrate: quadrature failed to converge");
    }
    return result;
}

} // namespace stem
