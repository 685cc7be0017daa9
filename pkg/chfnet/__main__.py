from chfnet.cli import main

raise SystemExit(main())
