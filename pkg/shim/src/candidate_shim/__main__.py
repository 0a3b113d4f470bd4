from candidate_shim import main

raise SystemExit(main())
