#pragma once

namespace crihp {

/// Entry point of the `crihp` tool. Returns 0 on success, 1 on usage,
/// validation, format or I/O errors and 2 on numerical aborts.
int cli(int argc, char** argv);

}  // namespace crihp
