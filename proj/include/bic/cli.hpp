#pragma once
#include <iostream>

namespace bic {
int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);
}
