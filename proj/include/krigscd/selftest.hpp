#pragma once

#include <ostream>

namespace krigscd {

// Quick oracle checks over the numerical core. Prints one line per check; returns the failure count.
int run_selftest(std::ostream& out);

}  // namespace krigscd
