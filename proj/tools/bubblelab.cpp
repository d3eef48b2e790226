#include "bubblelab/cli.hpp"

int main(int argc, char** argv)
{
    return bubblelab::cli_main(argc, argv);
}
