from pmdep.cli import main

main()
