#pragma once

// Convenience header pulling in the whole toolkit.

#include "nusselt/numerics.hpp"
#include "nusselt/physics.hpp"
#include "nusselt/dataset.hpp"
#include "nusselt/gp.hpp"
#include "nusselt/svr.hpp"
#include "nusselt/neural.hpp"
#include "nusselt/pinn.hpp"
#include "nusselt/validation.hpp"
#include "nusselt/families.hpp"
#include "nusselt/hyperopt.hpp"
#include "nusselt/transfer.hpp"
#include "nusselt/report.hpp"
