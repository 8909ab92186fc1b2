"""
Created on 2026-10-18

@author: wf
"""

import pidm
from pidm.yamlable import lod_storable


@lod_storable
class Version:
    """
    Version handling for the predictive inverse dynamics toolkit
    """

    name = "pidm"
    version = pidm.__version__
    date = "2026-10-18"
    updated = "2026-10-18"
    description = "Predictive inverse dynamics policies trained and evaluated in a toy tabletop world"

    authors = "Wolfgang Fahl"

    doc_url = "https://wiki.bitplan.com/index.php/Pidm"
    chat_url = "https://github.com/WolfgangFahl/pidm/discussions"
    cm_url = "https://github.com/WolfgangFahl/pidm"

    license = f"""Copyright 2026 contributors. All rights reserved.

  Licensed under the Apache License 2.0
  http://www.apache.org/licenses/LICENSE-2.0

  Distributed on an "AS IS" basis without warranties
  or conditions of any kind, either express or implied."""

    longDescription = f"""{name} version {version}
{description}

  Created by {authors} on {date} last updated {updated}"""
